import itertools

import numpy as np
import pytest

from qgosim import causality, executions, sysmodel
from qgosim.causality import (
    CausalDependency,
    LemmaViolation,
    NotComparable,
    SubstitutionMismatch,
    compute_causality,
    equicausal,
    lightcones,
    move_to_end,
    swap_adjacent,
    substitute,
)
from qgosim.executions import Apply, Execution, Receive, Send
from qgosim.qcore import NO_OUTCOME, DensityMatrix, RegisterAllocator, RegisterSpace
from qgosim.sysmodel import MessageInstance


def closure_oracle(x):
    """Direct definition: primitive edges closed under transitivity
    (Floyd-Warshall over event positions)."""
    n = len(x.events)
    adj = [[False] * n for _ in range(n)]
    for i, j in itertools.combinations(range(n), 2):
        a, b = x.events[i], x.events[j]
        if a.label == b.label and not any(
            x.events[k].label == a.label for k in range(i + 1, j)
        ):
            adj[i][j] = True
        if isinstance(a, Send) and isinstance(b, Receive) and b.msg_id == a.msg.msg_id:
            adj[i][j] = True
    for k in range(n):
        for i in range(n):
            for j in range(n):
                adj[i][j] = adj[i][j] or (adj[i][k] and adj[k][j])
    return {
        (x.events[i].eid, x.events[j].eid)
        for i in range(n) for j in range(n) if adj[i][j]
    }


def three_proc_execution():
    alloc = RegisterAllocator()
    regs = [alloc.fresh(2) for _ in range(3)]
    quantum = DensityMatrix.basis_state(RegisterSpace(tuple(regs)))
    procs = ("p0", "p1", "p2")
    st = sysmodel.initial_state(
        procs, {p: {"inbox": []} for p in procs}, quantum,
        {r: p for r, p in zip(regs, procs)},
    )
    events = (
        Send(eid=0, label="p0", msg=MessageInstance(0, "p0", "p1", classical=0)),
        Apply(eid=1, label="p2", proc="p2", name="a", outcome=NO_OUTCOME),
        Receive(eid=2, label="p1", chan="p0->p1", msg_id=0),
        Send(eid=3, label="p1", msg=MessageInstance(1, "p1", "p2", classical=1)),
        Apply(eid=4, label="p0", proc="p0", name="b", outcome=NO_OUTCOME),
        Receive(eid=5, label="p2", chan="p1->p2", msg_id=1),
    )
    return Execution(st, events)


class TestCausality:
    def test_against_oracle(self):
        x = three_proc_execution()
        rel = compute_causality(x)
        assert set(rel.pairs) == closure_oracle(x)

    def test_message_chain(self):
        rel = compute_causality(three_proc_execution())
        assert rel.prec(0, 2)   # send before receive
        assert rel.prec(0, 5)   # transitively through p1
        assert rel.prec(1, 5)   # same-label succession on p2
        assert not rel.prec(5, 1)

    def test_independent_events(self):
        rel = compute_causality(three_proc_execution())
        assert not rel.prec(0, 1)
        assert not rel.prec(1, 0)
        assert not rel.prec(4, 5)

    def test_oracle_on_random_shuffles(self):
        x = three_proc_execution()
        rng = np.random.default_rng(0)
        for _ in range(20):
            order = rng.permutation(len(x.events))
            y = Execution(x.initial, tuple(x.events[i] for i in order))
            assert set(compute_causality(y).pairs) == closure_oracle(y)


class TestEquicausal:
    def test_swap_of_independent_pair(self):
        x = three_proc_execution()
        y = Execution(x.initial, (x.events[1], x.events[0]) + x.events[2:])
        assert equicausal(x, y)

    def test_reordered_message_differs(self):
        x = three_proc_execution()
        # moving the receive before its send changes (indeed breaks) causality
        ev = list(x.events)
        ev[0], ev[2] = ev[2], ev[0]
        assert not equicausal(x, Execution(x.initial, tuple(ev)))

    def test_different_event_sets_not_comparable(self):
        x = three_proc_execution()
        y = Execution(x.initial, x.events[:-1])
        with pytest.raises(NotComparable):
            equicausal(x, y)


class TestLightcones:
    def test_past_and_future(self):
        x = three_proc_execution()
        past, fut = lightcones(x, {3})
        assert past == {0, 2}
        assert fut == {5}

    def test_isolated_event(self):
        x = three_proc_execution()
        past, fut = lightcones(x, {1})
        assert past == set()
        assert fut == {5}  # same-label succession on p2


class TestSwapAdjacent:
    def test_valid_swap(self):
        x = three_proc_execution()
        y = swap_adjacent(x, 0)
        assert [e.eid for e in y.events][:2] == [1, 0]
        assert sysmodel.states_equal(
            executions.final_state(x), executions.final_state(y), 1e-12
        )

    def test_causal_pair_rejected(self):
        x = three_proc_execution()
        with pytest.raises(CausalDependency):
            swap_adjacent(x, 2)  # receive then dependent send on p1

    def test_chain_of_swaps_preserves_final(self):
        x = three_proc_execution()
        rng = np.random.default_rng(3)
        y = x
        for _ in range(30):
            i = rng.integers(len(y.events) - 1)
            try:
                y = swap_adjacent(y, int(i))
            except CausalDependency:
                continue
        assert causality.check_equiv_theorem(x, y)


class TestMoveToEnd:
    def test_move_valid(self):
        x = three_proc_execution()
        y = move_to_end(x, 1, 4)
        assert y.events[4].eid == 1
        assert sysmodel.states_equal(
            executions.final_state(x), executions.final_state(y), 1e-12
        )

    def test_move_blocked_by_successor(self):
        x = three_proc_execution()
        with pytest.raises(CausalDependency):
            move_to_end(x, 0, 3)  # would cross its own receive

    def test_bad_bounds(self):
        x = three_proc_execution()
        with pytest.raises(IndexError):
            move_to_end(x, 2, 17)


class TestSubstitute:
    def test_substitute_reordered_fragment(self):
        x = three_proc_execution()
        frag = executions.slice_execution(x, 1, 2)
        alt = swap_adjacent(frag, 0)
        y = substitute(x, 1, 2, alt)
        assert [e.eid for e in y.events] == [1, 0, 2, 3, 4, 5]
        assert causality.check_equiv_theorem(x, y)

    def test_wrong_events_rejected(self):
        x = three_proc_execution()
        other = executions.slice_execution(x, 4, 5)
        with pytest.raises(SubstitutionMismatch):
            substitute(x, 1, 2, other)

    def test_wrong_final_state_rejected(self):
        x = three_proc_execution()
        frag = executions.slice_execution(x, 1, 3)
        # drop an event: different event set, not equicausal
        broken = Execution(frag.initial, frag.events[:-1])
        with pytest.raises(SubstitutionMismatch):
            substitute(x, 1, 3, broken)
