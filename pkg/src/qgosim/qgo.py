"""Decomposable global operations and the marker protocol that implements
them on top of any base algorithm.

The protocol augments a base algorithm with three procedures: invocation by
a leader, processing a newly seen global operation (apply the local
component, open channel records, broadcast markers), and reception handling
(first marker triggers processing, later markers close channels, messages on
open channels get the operation applied and recorded).  Each procedure emits
a block of events that is atomic on its processor.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from . import executions, qcore, sysmodel
from .executions import (
    Apply,
    ClassicalUpdate,
    Event,
    Invoke,
    Receive,
    Respond,
    Send,
    register_update,
    step,
)
from .qcore import QuantumOperation, RegisterId, RegisterMap
from .sysmodel import MessageInstance, SystemState, chan_key, encode_classical


class QgoError(Exception):
    pass


class ConcurrentInvocation(QgoError):
    pass


class AlreadyActive(QgoError):
    pass


class UnknownGlobalOp(QgoError):
    pass


# ---------------------------------------------------------------------------
# Extension state (the per-processor protocol register)
# ---------------------------------------------------------------------------

def idle_ext():
    return {"op": None, "self": None, "res": {}, "waitset": []}


def is_active(ext) -> bool:
    return bool(ext) and ext.get("op") is not None


def incoming_channels(procs, proc) -> list[str]:
    return sorted(chan_key(p, proc) for p in procs)


def outgoing_channels(procs, proc) -> list[str]:
    return sorted(chan_key(proc, p) for p in procs)


def append_record(ext, chan, outcome):
    """Pure helper: new ext with ``outcome`` appended to the channel record."""
    ext = copy.deepcopy(ext)
    ext["res"].setdefault(chan, []).append(outcome)
    return ext


def record_from_ext(proc, ext):
    """The response a processor gives once all its channels are closed."""
    return {
        "proc": proc,
        "gid": ext["op"],
        "self": ext["self"],
        "channels": {c: list(v) for c, v in sorted(ext["res"].items())},
    }


@register_update("qgo.start")
def _qgo_start(sigma, ext, outcome, params):
    gid, trigger, incoming = params
    waitset = [c for c in incoming if c != trigger]
    ext = {
        "op": gid,
        "self": outcome,
        "res": {c: [] for c in incoming},
        "waitset": waitset,
    }
    return sigma, ext


@register_update("qgo.marker_close")
def _qgo_marker_close(sigma, ext, outcome, params):
    (chan,) = params
    ext["waitset"] = [c for c in ext["waitset"] if c != chan]
    return sigma, ext


@register_update("qgo.record")
def _qgo_record(sigma, ext, outcome, params):
    (chan,) = params
    ext["res"].setdefault(chan, []).append(outcome)
    return sigma, ext


@register_update("qgo.respond")
def _qgo_respond(sigma, ext, outcome, params):
    return sigma, idle_ext()


# ---------------------------------------------------------------------------
# Decomposable global operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalOpSpec:
    """One component of a decomposable global operation, instantiated for a
    concrete processor or message.

    ``qop`` is None for purely classical components, in which case
    ``fixed_outcome`` supplies the (deterministic) recorded outcome.
    """

    qop: QuantumOperation | None
    in_regs: tuple[RegisterId, ...] = ()
    out_regs: tuple[RegisterId, ...] = ()
    fixed_outcome: str | None = None


class DecomposableGlobalOp:
    """A global operation factoring into per-processor and per-message parts."""

    gid: str

    def proc_component(self, state: SystemState, proc: str) -> LocalOpSpec:
        raise NotImplementedError

    def msg_component(self, state: SystemState, msg: MessageInstance) -> LocalOpSpec:
        raise NotImplementedError

    def validate(self, state: SystemState) -> bool:
        for proc in state.procs:
            spec = self.proc_component(state, proc)
            if spec.qop is not None and not qcore.validate_operation(spec.qop).valid:
                return False
        return True


def outcome_label(classical_part, quantum_part) -> str:
    return json.dumps({"c": classical_part, "q": quantum_part}, sort_keys=True)


def parse_outcome(label: str) -> dict:
    return json.loads(label)


class SnapshotMeasure(DecomposableGlobalOp):
    """Measure every register in the standard basis and record every
    classical state: the quantum analogue of a global snapshot."""

    gid = "snapshot-measure"

    def _component(self, enc, regs):
        if not regs:
            return LocalOpSpec(None, fixed_outcome=outcome_label(enc, None))
        meas = qcore.standard_basis_measurement([r.dim for r in regs])
        meas = qcore.relabel_outcomes(meas, lambda q: outcome_label(enc, q))
        return LocalOpSpec(meas, tuple(regs), tuple(regs))

    def proc_component(self, state, proc):
        return self._component(encode_classical(state.classical[proc]), state.owned_by(proc))

    def msg_component(self, state, msg):
        return self._component(encode_classical(msg.classical), msg.quantum_regs)


class RecordOnly(DecomposableGlobalOp):
    """Record classical states without disturbing anything: the classical
    snapshot special case."""

    gid = "record-only"

    def proc_component(self, state, proc):
        enc = encode_classical(state.classical[proc])
        return LocalOpSpec(None, fixed_outcome=outcome_label(enc, None))

    def msg_component(self, state, msg):
        enc = encode_classical(msg.classical)
        return LocalOpSpec(None, fixed_outcome=outcome_label(enc, None))


class GlobalEncrypt(DecomposableGlobalOp):
    """One-time-pad every register with a uniformly sampled Pauli; the
    sampled key is the recorded outcome."""

    gid = "global-encrypt"

    def _component(self, regs):
        if not regs or any(r.dim != 2 for r in regs):
            if regs:
                raise QgoError("pauli pad requires qubit registers")
            return LocalOpSpec(None, fixed_outcome=outcome_label(None, ""))
        pad = qcore.pauli_pad_operation(len(regs))
        pad = qcore.relabel_outcomes(pad, lambda k: outcome_label(None, k))
        return LocalOpSpec(pad, tuple(regs), tuple(regs))

    def proc_component(self, state, proc):
        return self._component(state.owned_by(proc))

    def msg_component(self, state, msg):
        return self._component(msg.quantum_regs)


BUILTIN_GLOBAL_OPS = {
    SnapshotMeasure.gid: SnapshotMeasure,
    RecordOnly.gid: RecordOnly,
    GlobalEncrypt.gid: GlobalEncrypt,
}


def global_op_library(gids) -> dict[str, DecomposableGlobalOp]:
    lib = {}
    for gid in gids:
        if gid not in BUILTIN_GLOBAL_OPS:
            raise UnknownGlobalOp(f"unknown global operation {gid!r}")
        lib[gid] = BUILTIN_GLOBAL_OPS[gid]()
    return lib


# ---------------------------------------------------------------------------
# Event generation context
# ---------------------------------------------------------------------------

@dataclass
class GenContext:
    """Counters and the outcome RNG used while generating events."""

    rng: np.random.Generator
    next_eid: int = 0
    next_msg_id: int = 0

    def eid(self) -> int:
        e = self.next_eid
        self.next_eid += 1
        return e

    def msg_id(self) -> int:
        m = self.next_msg_id
        self.next_msg_id += 1
        return m


def choose_outcome(state: SystemState, spec: LocalOpSpec, ctx: GenContext) -> str:
    """Draw an outcome with its physical probability (or take the fixed one)."""
    if spec.qop is None:
        assert spec.fixed_outcome is not None
        return spec.fixed_outcome
    if len(spec.qop.outcome_set) == 1:
        return spec.qop.outcome_set[0]
    regmap = RegisterMap(spec.in_regs, spec.out_regs)
    probs = np.array([
        max(qcore.apply_outcome(state.quantum, spec.qop, regmap, r).trace, 0.0)
        for r in spec.qop.outcome_set
    ])
    probs = probs / probs.sum()
    idx = ctx.rng.choice(len(spec.qop.outcome_set), p=probs)
    return spec.qop.outcome_set[idx]


def same_operation(a: QuantumOperation | None, b: QuantumOperation | None) -> bool:
    if a is None or b is None:
        return a is b or (a is None and b is None)
    if a.outcome_set != b.outcome_set or a.in_dims != b.in_dims or a.out_dims != b.out_dims:
        return False
    for r in a.outcome_set:
        ka, kb = a.kraus_by_outcome[r], b.kraus_by_outcome[r]
        if len(ka) != len(kb):
            return False
        if not all(np.allclose(x, y) for x, y in zip(ka, kb)):
            return False
    return True


class AugmentedPredicate(executions.TransitionPredicate):
    """Step predicate of the base algorithm augmented with the marker
    protocol: protocol events must follow the protocol's guards with
    components recomputed from the pre-state, everything else must be
    allowed by the base algorithm."""

    def __init__(self, base, library: dict[str, DecomposableGlobalOp]):
        self.base = base
        self.library = library

    def _check_gop_self(self, pre, event) -> bool:
        gid = event.name.split(":", 1)[1]
        if gid not in self.library or is_active(pre.ext[event.proc]):
            return False
        u = event.update
        if u is None or u.name != "qgo.start" or u.params[0] != gid:
            return False
        trigger = u.params[1]
        if tuple(u.params[2]) != tuple(incoming_channels(pre.procs, event.proc)):
            return False
        if trigger is not None and trigger not in u.params[2]:
            return False
        spec = self.library[gid].proc_component(pre, event.proc)
        return (
            same_operation(spec.qop, event.qop)
            and tuple(spec.in_regs) == tuple(event.in_regs)
            and (spec.qop is not None or event.outcome == spec.fixed_outcome)
        )

    def _check_gop_msg(self, pre, event) -> bool:
        gid = event.name.split(":", 1)[1]
        ext = pre.ext[event.proc]
        if gid not in self.library or not is_active(ext) or ext["op"] != gid:
            return False
        u = event.update
        if u is None or u.name != "qgo.record":
            return False
        (chan,) = u.params
        return chan in ext["waitset"]

    def allows(self, pre, event, post) -> bool:
        if isinstance(event, Invoke):
            return event.gid in self.library and not any(
                is_active(pre.ext[p]) for p in pre.procs
            )
        if isinstance(event, Respond):
            ext = pre.ext[event.label]
            return (
                is_active(ext)
                and not ext["waitset"]
                and event.record == record_from_ext(event.label, ext)
                and event.update == ClassicalUpdate("qgo.respond")
            )
        if isinstance(event, Apply) and event.protocol:
            if event.name.startswith("gop-self:"):
                return self._check_gop_self(pre, event)
            if event.name.startswith("gop-msg:"):
                return self._check_gop_msg(pre, event)
            return False
        if isinstance(event, Send) and event.protocol:
            ext = pre.ext[event.label]
            return (
                is_active(ext)
                and event.msg.marker == ext["op"]
                and event.msg.quantum_regs == ()
            )
        if isinstance(event, Receive):
            contents = pre.channels.get(event.chan, ())
            if not contents or contents[0].msg_id != event.msg_id:
                return False
            head = contents[0]
            ext = pre.ext[event.label]
            if event.protocol:
                if head.marker is None:
                    return False
                if event.update is None:
                    return not is_active(ext)  # first marker, starts the block
                return (
                    event.update == ClassicalUpdate("qgo.marker_close", (event.chan,))
                    and is_active(ext)
                    and event.chan in ext["waitset"]
                )
            return head.marker is None and event.update is None
        if getattr(event, "protocol", False):
            return False
        return self.base.allows(pre, event, post)


def qgo_augment(base, library: dict[str, DecomposableGlobalOp]) -> AugmentedPredicate:
    """The transition predicate of the marker-augmented algorithm."""
    return AugmentedPredicate(base, library)


def _apply_events(state: SystemState, events: list[Event]) -> SystemState:
    for ev in events:
        state = step(state, ev)
    return state


# ---------------------------------------------------------------------------
# The three protocol procedures
# ---------------------------------------------------------------------------

def qgo_process_new_global_op(
    state: SystemState,
    proc: str,
    gop: DecomposableGlobalOp,
    chan: str | None,
    ctx: GenContext,
) -> tuple[list[Event], SystemState]:
    """Apply the local component, open records, broadcast markers.

    ``chan`` is the channel the triggering marker arrived on, or None for
    the invoking leader; that channel's record is closed empty.
    """
    if is_active(state.ext[proc]):
        raise AlreadyActive(f"processor {proc} already running {state.ext[proc]['op']}")
    incoming = incoming_channels(state.procs, proc)
    spec = gop.proc_component(state, proc)
    outcome = choose_outcome(state, spec, ctx)
    events: list[Event] = [
        Apply(
            eid=ctx.eid(),
            label=proc,
            proc=proc,
            name=f"gop-self:{gop.gid}",
            outcome=outcome,
            qop=spec.qop,
            in_regs=spec.in_regs,
            out_regs=spec.out_regs,
            update=ClassicalUpdate("qgo.start", (gop.gid, chan, tuple(incoming))),
            protocol=True,
        )
    ]
    for dest in sorted(state.procs):
        msg = MessageInstance(
            msg_id=ctx.msg_id(),
            src=proc,
            dst=dest,
            classical={"kind": "marker", "gid": gop.gid},
            marker=gop.gid,
        )
        events.append(Send(eid=ctx.eid(), label=proc, msg=msg, protocol=True))
    return events, _apply_events(state, events)


def qgo_invoke(
    state: SystemState,
    proc: str,
    gop: DecomposableGlobalOp,
    ctx: GenContext,
) -> tuple[list[Event], SystemState]:
    """Leader invocation: the Invoke event plus the processing block."""
    for p in state.procs:
        if is_active(state.ext[p]):
            raise ConcurrentInvocation(
                f"processor {p} still running {state.ext[p]['op']}"
            )
    invoke = Invoke(eid=ctx.eid(), label=proc, gid=gop.gid)
    state = step(state, invoke)
    block, state = qgo_process_new_global_op(state, proc, gop, None, ctx)
    return [invoke] + block, state


def qgo_receive(
    state: SystemState,
    proc: str,
    chan: str,
    library: dict[str, DecomposableGlobalOp],
    ctx: GenContext,
) -> tuple[list[Event], SystemState]:
    """Reception handling for the head of ``chan``, per the marker protocol."""
    contents = state.channels[chan]
    if not contents:
        raise sysmodel.EmptyChannel(f"channel {chan} is empty")
    msg = contents[0]
    ext = state.ext[proc]

    if msg.marker is not None:
        gop = library.get(msg.marker)
        if gop is None:
            raise UnknownGlobalOp(f"marker names unknown operation {msg.marker!r}")
        if not is_active(ext):
            recv = Receive(
                eid=ctx.eid(), label=proc, chan=chan, msg_id=msg.msg_id, protocol=True
            )
            state = step(state, recv)
            block, state = qgo_process_new_global_op(state, proc, gop, chan, ctx)
            return [recv] + block, state
        # Ongoing operation: close this channel, respond if it was the last.
        recv = Receive(
            eid=ctx.eid(),
            label=proc,
            chan=chan,
            msg_id=msg.msg_id,
            update=ClassicalUpdate("qgo.marker_close", (chan,)),
            protocol=True,
        )
        state = step(state, recv)
        events: list[Event] = [recv]
        if not state.ext[proc]["waitset"]:
            record = record_from_ext(proc, state.ext[proc])
            resp = Respond(
                eid=ctx.eid(),
                label=proc,
                record=record,
                update=ClassicalUpdate("qgo.respond"),
            )
            state = step(state, resp)
            events.append(resp)
        return events, state

    # Regular message.
    recording = is_active(ext) and chan in ext["waitset"]
    recv = Receive(eid=ctx.eid(), label=proc, chan=chan, msg_id=msg.msg_id)
    state = step(state, recv)
    events = [recv]
    if recording:
        gop = library[ext["op"]]
        spec = gop.msg_component(state, msg)
        outcome = choose_outcome(state, spec, ctx)
        apply = Apply(
            eid=ctx.eid(),
            label=proc,
            proc=proc,
            name=f"gop-msg:{gop.gid}",
            outcome=outcome,
            qop=spec.qop,
            in_regs=spec.in_regs,
            out_regs=spec.out_regs,
            update=ClassicalUpdate("qgo.record", (chan,)),
            target_msg=msg.msg_id,
            protocol=True,
        )
        state = step(state, apply)
        events.append(apply)
    return events, state
