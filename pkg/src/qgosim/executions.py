"""Events, executions, fragments, and deterministic replay.

An event records everything needed to reproduce its effect: measurement
outcomes, the concrete quantum operation, and a named classical-update
descriptor resolved through a registry.  Replaying an execution is therefore
fully deterministic and needs no random source.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace as dc_replace
from typing import Any, Callable, Sequence

import numpy as np

from . import qcore, sysmodel
from .qcore import QuantumOperation, RegisterId
from .sysmodel import MessageInstance, SystemState

# Traces below this are treated as physically impossible histories.
ZERO_TRACE = 1e-15


class ReplayError(Exception):
    def __init__(self, index: int, reason: str):
        super().__init__(f"invalid step at index {index}: {reason}")
        self.index = index
        self.reason = reason


class ConcatMismatch(Exception):
    pass


# ---------------------------------------------------------------------------
# Classical updates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassicalUpdate:
    """A named, serializable classical state transformation."""

    name: str
    params: tuple = ()


_UPDATES: dict[str, Callable] = {}


def register_update(name: str):
    def deco(fn):
        _UPDATES[name] = fn
        return fn
    return deco


def run_update(update: ClassicalUpdate | None, sigma, ext, outcome):
    """Apply an update to deep copies of one processor's (sigma, ext)."""
    if update is None:
        return sigma, ext
    fn = _UPDATES.get(update.name)
    if fn is None:
        raise KeyError(f"unknown classical update {update.name!r}")
    return fn(copy.deepcopy(sigma), copy.deepcopy(ext), outcome, update.params)


@register_update("noop")
def _noop(sigma, ext, outcome, params):
    return sigma, ext


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Invoke:
    eid: int
    label: str
    gid: str
    protocol: bool = False  # invocations always pass the history filter


@dataclass(frozen=True)
class Respond:
    eid: int
    label: str
    record: Any  # response record, a JSON-able dict
    update: ClassicalUpdate | None = None
    protocol: bool = False


@dataclass(frozen=True, eq=False)
class Apply:
    eid: int
    label: str
    proc: str
    name: str
    outcome: str
    qop: QuantumOperation | None = None
    in_regs: tuple[RegisterId, ...] = ()
    out_regs: tuple[RegisterId, ...] = ()
    update: ClassicalUpdate | None = None
    target_msg: int | None = None
    protocol: bool = False


@dataclass(frozen=True, eq=False)
class Send:
    eid: int
    label: str
    msg: MessageInstance
    update: ClassicalUpdate | None = None
    protocol: bool = False


@dataclass(frozen=True)
class Receive:
    eid: int
    label: str
    chan: str
    msg_id: int
    update: ClassicalUpdate | None = None
    protocol: bool = False


@dataclass(frozen=True, eq=False)
class AtomicExecute:
    """Specification-only event: the global operation hits every processor
    and every in-flight message in one step."""

    eid: int
    label: str  # leader processor
    gid: str
    # (proc, qop, in_regs, out_regs, outcome, cop_update)
    proc_comps: tuple = ()
    # (msg_id, qop, in_regs, out_regs, outcome)
    msg_comps: tuple = ()
    protocol: bool = True


Event = Invoke | Respond | Apply | Send | Receive | AtomicExecute


def in_filter(event: Event) -> bool:
    """The history filter: invocations, responses, and base-algorithm events."""
    if isinstance(event, (Invoke, Respond)):
        return True
    if isinstance(event, AtomicExecute):
        return False
    return not event.protocol


# ---------------------------------------------------------------------------
# Executions and replay
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Execution:
    """Initial state plus a totally ordered finite event sequence."""

    initial: SystemState
    events: tuple[Event, ...]

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))

    def index_of(self, eid: int) -> int:
        for i, e in enumerate(self.events):
            if e.eid == eid:
                return i
        raise KeyError(f"no event with id {eid}")


Fragment = Execution


def _with_proc_classical(state: SystemState, proc: str, sigma, ext) -> SystemState:
    classical = dict(state.classical)
    extmap = dict(state.ext)
    classical[proc] = sigma
    extmap[proc] = ext
    return dc_replace(state, classical=classical, ext=extmap)


def step(state: SystemState, event: Event) -> SystemState:
    """Apply a single event under the distributed-algorithm semantics."""
    if isinstance(event, Invoke):
        # Invocation touches only the extension state; the bookkeeping is
        # carried by the operation event that follows it.
        return state

    if isinstance(event, Respond):
        sigma, ext = run_update(
            event.update, state.classical[event.label], state.ext[event.label], None
        )
        return _with_proc_classical(state, event.label, sigma, ext)

    if isinstance(event, Apply):
        msg_in_flight = (
            event.target_msg is not None
            and state.find_message(event.target_msg) is not None
        )
        new_state = sysmodel.apply_local(
            state,
            event.proc,
            event.qop,
            event.in_regs,
            event.out_regs,
            event.outcome,
            target_msg=event.target_msg,
        )
        if event.qop is not None and new_state.quantum.trace < ZERO_TRACE:
            raise sysmodel.SysmodelError(
                f"outcome {event.outcome!r} has zero probability"
            )
        if msg_in_flight:
            # Outcome parked in the message's pending slot; the classical
            # update runs when the message is received.
            return new_state
        sigma, ext = run_update(
            event.update,
            new_state.classical[event.proc],
            new_state.ext[event.proc],
            event.outcome,
        )
        return _with_proc_classical(new_state, event.proc, sigma, ext)

    if isinstance(event, Send):
        new_state = sysmodel.send(state, event.label, event.msg)
        sigma, ext = run_update(
            event.update, new_state.classical[event.label], new_state.ext[event.label], None
        )
        return _with_proc_classical(new_state, event.label, sigma, ext)

    if isinstance(event, Receive):
        contents = state.channels.get(event.chan, ())
        if not contents:
            raise sysmodel.EmptyChannel(f"channel {event.chan} is empty")
        if contents[0].msg_id != event.msg_id:
            raise sysmodel.SysmodelError(
                f"expected message {event.msg_id} at head of {event.chan}, "
                f"found {contents[0].msg_id}"
            )
        new_state, msg = sysmodel.receive(state, event.label, event.chan)
        sigma, ext = run_update(
            event.update, new_state.classical[event.label], new_state.ext[event.label], None
        )
        return _with_proc_classical(new_state, event.label, sigma, ext)

    if isinstance(event, AtomicExecute):
        from .specmachine import apply_atomic  # spec-only semantics
        return apply_atomic(state, event)

    raise TypeError(f"unknown event type {type(event)!r}")


def replay(x: Execution) -> list[SystemState]:
    """Replay, returning the full state sequence Ψ^0 .. Ψ^n.

    Deterministic: every outcome is fixed inside its event.  Raises
    ReplayError (with the failing index) on any invalid step, including
    receive-before-send, FIFO violations, reused message ids, and
    zero-probability outcomes.
    """
    states = [x.initial]
    seen_ids = set(x.initial.message_ids())
    state = x.initial
    for i, event in enumerate(x.events):
        if isinstance(event, Send):
            if event.msg.msg_id in seen_ids:
                raise ReplayError(i, f"message id {event.msg.msg_id} reused")
            seen_ids.add(event.msg.msg_id)
        try:
            state = step(state, event)
        except (sysmodel.SysmodelError, qcore.QcoreError, KeyError) as exc:
            raise ReplayError(i, str(exc)) from exc
        states.append(state)
    return states


def final_state(x: Execution) -> SystemState:
    return replay(x)[-1]


def well_formed(x: Execution) -> bool:
    try:
        replay(x)
        return True
    except ReplayError:
        return False


def slice_execution(x: Execution, i: int, j: int) -> Fragment:
    """Fragment covering events i..j (1-based, inclusive)."""
    if not (1 <= i <= j <= len(x.events)):
        raise IndexError(f"slice bounds {i}:{j} out of range")
    states = replay(x)
    return Execution(states[i - 1], x.events[i - 1:j])


def concat(a: Fragment, b: Fragment) -> Fragment:
    if not sysmodel.states_identical(final_state(a), b.initial):
        raise ConcatMismatch("final state of first fragment differs from second's initial")
    return Execution(a.initial, a.events + b.events)


# ---------------------------------------------------------------------------
# Transition predicates
# ---------------------------------------------------------------------------

class TransitionPredicate:
    """A step predicate assembled from per-processor local predicates."""

    def allows(self, pre: SystemState, event: Event, post: SystemState) -> bool:
        raise NotImplementedError


@dataclass
class ValidationResult:
    valid: bool
    first_failure: int | None = None
    reason: str = ""

    def __bool__(self):
        return self.valid


def validate(predicate: TransitionPredicate, x: Execution) -> ValidationResult:
    """True iff the execution is well formed and every step is allowed."""
    try:
        states = replay(x)
    except ReplayError as exc:
        return ValidationResult(False, exc.index, f"not well formed: {exc.reason}")
    for i, event in enumerate(x.events):
        if not predicate.allows(states[i], event, states[i + 1]):
            return ValidationResult(False, i, f"step {i} not allowed by predicate")
    return ValidationResult(True)
