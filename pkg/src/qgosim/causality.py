"""Causal order over executions and checked reordering transformations.

Causality is the transitive closure of two primitive edge kinds: consecutive
events carrying the same label, and the send/receive pair of one message.
The reordering operations (adjacent swap, move-to-end, substitution) verify
their own postconditions; a postcondition failure raises LemmaViolation,
which indicates a bug rather than a property of the input.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import executions, sysmodel
from .executions import Execution, Receive, Send, replay, step

# Tolerance for a single freshly-checked algebraic identity.
EPS_EXACT = 1e-12
# Tolerance for identities accumulated over long transformation chains.
EPS_CHAIN = 1e-9


class CausalityError(Exception):
    pass


class CausalDependency(CausalityError):
    """A reordering was attempted across a causal edge."""


class NotComparable(CausalityError):
    """Equicausality asked of executions over different event sets."""


class SubstitutionMismatch(CausalityError):
    pass


class LemmaViolation(AssertionError):
    """A checked transformation postcondition failed: an internal bug."""


@dataclass(frozen=True)
class CausalRelation:
    """The full happens-before relation, as a set of (eid, eid) pairs."""

    eids: frozenset
    pairs: frozenset

    def prec(self, a: int, b: int) -> bool:
        return (a, b) in self.pairs


def primitive_edges(x: Execution) -> set[tuple[int, int]]:
    edges: set[tuple[int, int]] = set()
    last_by_label: dict[str, int] = {}
    send_of_msg: dict[int, int] = {}
    for ev in x.events:
        if ev.label in last_by_label:
            edges.add((last_by_label[ev.label], ev.eid))
        last_by_label[ev.label] = ev.eid
        if isinstance(ev, Send):
            send_of_msg[ev.msg.msg_id] = ev.eid
        elif isinstance(ev, Receive) and ev.msg_id in send_of_msg:
            edges.add((send_of_msg[ev.msg_id], ev.eid))
    return edges


def compute_causality(x: Execution) -> CausalRelation:
    edges = primitive_edges(x)
    succ: dict[int, set[int]] = {}
    for a, b in edges:
        succ.setdefault(a, set()).add(b)
    # Events are totally ordered and edges point forward, so a reverse
    # positional sweep accumulates each event's full causal future.
    future: dict[int, set[int]] = {}
    pairs: set[tuple[int, int]] = set()
    for ev in reversed(x.events):
        f: set[int] = set()
        for b in succ.get(ev.eid, ()):
            f.add(b)
            f |= future.get(b, set())
        future[ev.eid] = f
        for b in f:
            pairs.add((ev.eid, b))
    return CausalRelation(
        eids=frozenset(e.eid for e in x.events), pairs=frozenset(pairs)
    )


def equicausal(x: Execution, y: Execution) -> bool:
    """Same events, same happens-before relation."""
    rx = compute_causality(x)
    ry = compute_causality(y)
    if rx.eids != ry.eids:
        raise NotComparable("executions have different event sets")
    return rx.pairs == ry.pairs


def lightcones(x: Execution, eids) -> tuple[set[int], set[int]]:
    """(past, future) of the event set: everything causally before/after it."""
    eids = set(eids)
    rel = compute_causality(x)
    past = {a for (a, b) in rel.pairs if b in eids and a not in eids}
    fut = {b for (a, b) in rel.pairs if a in eids and b not in eids}
    return past, fut


def _swapped(x: Execution, i: int) -> Execution:
    ev = list(x.events)
    ev[i], ev[i + 1] = ev[i + 1], ev[i]
    return Execution(x.initial, tuple(ev))


def swap_adjacent(x: Execution, i: int, relation: CausalRelation | None = None) -> Execution:
    """Swap the causally independent events at positions i and i+1.

    Precondition (CausalDependency otherwise): events[i] does not happen
    before events[i+1].  Postconditions, checked by full replay: the result
    is well formed, equicausal with ``x``, and ends in the same state
    (within EPS_EXACT).
    """
    a, b = x.events[i], x.events[i + 1]
    rel = relation if relation is not None else compute_causality(x)
    if rel.prec(a.eid, b.eid):
        raise CausalDependency(f"event {a.eid} happens before {b.eid}")
    y = _swapped(x, i)
    try:
        final_y = replay(y)[-1]
    except executions.ReplayError as exc:
        raise LemmaViolation(f"swap produced ill-formed execution: {exc}") from exc
    if not equicausal(x, y):
        raise LemmaViolation("swap changed the causal relation")
    final_x = replay(x)[-1]
    if not sysmodel.states_equal(final_x, final_y, EPS_EXACT):
        raise LemmaViolation("swap changed the final state")
    return y


def swap_adjacent_cached(
    x: Execution,
    states: list,
    i: int,
    relation: CausalRelation,
) -> tuple[Execution, list]:
    """Adjacent swap with an O(1) local state check instead of full replay.

    ``states`` is the replay of ``x``; the returned list is the replay of
    the swapped execution, with entries after i+1 reused (they agree with a
    fresh replay to floating-point noise, far below EPS_EXACT).  The causal
    relation is unchanged by a valid swap, so ``relation`` stays usable.
    """
    a, b = x.events[i], x.events[i + 1]
    if relation.prec(a.eid, b.eid):
        raise CausalDependency(f"event {a.eid} happens before {b.eid}")
    try:
        mid = step(states[i], b)
        end = step(mid, a)
    except (sysmodel.SysmodelError, executions.ReplayError) as exc:
        raise LemmaViolation(f"swap produced invalid step: {exc}") from exc
    if not sysmodel.states_equal(end, states[i + 2], EPS_EXACT):
        raise LemmaViolation("swap changed the state after the pair")
    new_states = list(states)
    new_states[i + 1] = mid
    new_states[i + 2] = end
    return _swapped(x, i), new_states


def move_to_end(x: Execution, i: int, j: int) -> Execution:
    """Move the event at position i to position j by repeated swaps.

    Precondition: no event in positions i+1..j causally depends on the
    event at i (each individual swap checks this).
    """
    if not (0 <= i <= j < len(x.events)):
        raise IndexError(f"move bounds {i}:{j} out of range")
    rel = compute_causality(x)
    states = replay(x)
    for k in range(i, j):
        x, states = swap_adjacent_cached(x, states, k, rel)
    final = replay(x)[-1]
    if not sysmodel.states_equal(final, states[-1], EPS_EXACT):
        raise LemmaViolation("move-to-end drifted from replayed state")
    return x


def substitute(x: Execution, i: int, j: int, y0: Execution) -> Execution:
    """Replace the fragment at 1-based positions i..j with ``y0``.

    ``y0`` must be equicausal with the fragment it replaces and end in the
    same state (within EPS_EXACT).
    """
    frag = executions.slice_execution(x, i, j)
    try:
        if not equicausal(frag, y0):
            raise SubstitutionMismatch("replacement is not equicausal with fragment")
    except NotComparable as exc:
        raise SubstitutionMismatch(str(exc)) from exc
    if not sysmodel.states_equal(
        executions.final_state(frag), executions.final_state(y0), EPS_EXACT
    ):
        raise SubstitutionMismatch("replacement ends in a different state")
    if not sysmodel.states_equal(frag.initial, y0.initial, EPS_EXACT):
        raise SubstitutionMismatch("replacement starts from a different state")
    events = x.events[: i - 1] + y0.events + x.events[j:]
    result = Execution(x.initial, events)
    if not executions.well_formed(result):
        raise LemmaViolation("substitution produced ill-formed execution")
    return result


def check_equiv_theorem(x: Execution, y: Execution, tol: float = EPS_CHAIN) -> bool:
    """Equicausal executions from the same initial state end in the same
    state: the reordering theorem, checked concretely."""
    if not sysmodel.states_equal(x.initial, y.initial, 0.0):
        return False
    if not equicausal(x, y):
        return False
    return sysmodel.states_equal(
        executions.final_state(x), executions.final_state(y), tol
    )
