"""Distributed-system state: processors, FIFO channels, register ownership.

Each processor and each in-flight message has a classical part (a plain
JSON-able value) and zero or more quantum registers.  The quantum state of
the whole system is a single density matrix; ownership of its registers is
tracked explicitly, so sending and receiving relabel registers without ever
touching the matrix entries.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np

from . import qcore
from .qcore import DensityMatrix, RegisterId, RegisterMap, QuantumOperation

ChannelKey = str  # "src->dst"


class SysmodelError(Exception):
    pass


class OwnershipViolation(SysmodelError):
    pass


class DuplicateMessage(SysmodelError):
    pass


class EmptyChannel(SysmodelError):
    pass


class NotRecipient(SysmodelError):
    pass


class LocalityViolation(SysmodelError):
    pass


def chan_key(src: str, dst: str) -> ChannelKey:
    return f"{src}->{dst}"


def chan_endpoints(key: ChannelKey) -> tuple[str, str]:
    src, dst = key.split("->")
    return src, dst


def all_channels(procs) -> list[ChannelKey]:
    """Every ordered pair of processors, including self-channels."""
    return [chan_key(p, q) for p in procs for q in procs]


def encode_classical(value: Any) -> str:
    """Deterministic structural encoding of a classical value."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class MessageInstance:
    msg_id: int
    src: str
    dst: str
    classical: Any = None
    quantum_regs: tuple[RegisterId, ...] = ()
    marker: str | None = None
    # Transient slot for the outcome of a global operation applied to this
    # message while it is still in flight; cleared on reception.
    pending: str | None = None

    @property
    def channel(self) -> ChannelKey:
        return chan_key(self.src, self.dst)

    @property
    def owner_token(self) -> str:
        return f"msg:{self.msg_id}"


@dataclass(frozen=True)
class SystemState:
    """Immutable snapshot of the full hybrid state.

    ``classical`` maps processor name to its base-algorithm state (a dict
    holding at least an "inbox" list).  ``ext`` holds the per-processor
    protocol or specification extension state.  ``ownership`` maps every
    register of ``quantum`` to a processor name or a message owner token.
    """

    procs: tuple[str, ...]
    classical: Mapping[str, Any]
    ext: Mapping[str, Any]
    channels: Mapping[ChannelKey, tuple[MessageInstance, ...]]
    ownership: Mapping[RegisterId, str]
    quantum: DensityMatrix

    def check_ownership_partition(self) -> None:
        owned = set(self.ownership)
        live = set(self.quantum.space.registers)
        if owned != live:
            raise OwnershipViolation(
                f"ownership keys {owned} do not partition live registers {live}"
            )
        for chan in self.channels.values():
            for msg in chan:
                for reg in msg.quantum_regs:
                    if self.ownership.get(reg) != msg.owner_token:
                        raise OwnershipViolation(
                            f"register {reg} of message {msg.msg_id} owned by "
                            f"{self.ownership.get(reg)}"
                        )

    def owned_by(self, owner: str) -> tuple[RegisterId, ...]:
        regs = [r for r in self.quantum.space.registers if self.ownership[r] == owner]
        return tuple(sorted(regs, key=lambda r: r.id))

    def message_ids(self) -> set[int]:
        return {m.msg_id for chan in self.channels.values() for m in chan}

    def find_message(self, msg_id: int) -> MessageInstance | None:
        for chan in self.channels.values():
            for m in chan:
                if m.msg_id == msg_id:
                    return m
        return None


def initial_state(procs, classical, quantum, ownership, ext=None) -> SystemState:
    procs = tuple(procs)
    channels = {c: () for c in all_channels(procs)}
    state = SystemState(
        procs=procs,
        classical=dict(classical),
        ext=dict(ext) if ext is not None else {p: None for p in procs},
        channels=channels,
        ownership=dict(ownership),
        quantum=quantum,
    )
    state.check_ownership_partition()
    return state


def send(state: SystemState, sender: str, msg: MessageInstance) -> SystemState:
    """Append ``msg`` to the channel sender->dst, moving register ownership.

    The quantum matrix entries are unchanged; only the ownership labels move.
    """
    if msg.src != sender:
        raise OwnershipViolation(f"message src {msg.src} does not match sender {sender}")
    if msg.msg_id in state.message_ids():
        raise DuplicateMessage(f"message id {msg.msg_id} already in flight")
    for reg in msg.quantum_regs:
        if state.ownership.get(reg) != sender:
            raise OwnershipViolation(
                f"register {reg} not owned by sender {sender}"
            )
    key = msg.channel
    ownership = dict(state.ownership)
    for reg in msg.quantum_regs:
        ownership[reg] = msg.owner_token
    channels = dict(state.channels)
    channels[key] = channels[key] + (msg,)
    return replace(state, channels=channels, ownership=ownership)


def receive(state: SystemState, receiver: str, chan: ChannelKey) -> tuple[SystemState, MessageInstance]:
    """Pop the head of ``chan`` and deliver it to ``receiver``.

    Ownership of the message's registers moves to the receiver.  Non-marker
    classical contents are appended to the receiver's inbox; a pending
    global-operation outcome carried by the message is moved into the
    receiver's channel record.
    """
    _, dst = chan_endpoints(chan)
    if dst != receiver:
        raise NotRecipient(f"channel {chan} does not end at {receiver}")
    contents = state.channels[chan]
    if not contents:
        raise EmptyChannel(f"channel {chan} is empty")
    msg, rest = contents[0], contents[1:]
    ownership = dict(state.ownership)
    for reg in msg.quantum_regs:
        ownership[reg] = receiver
    channels = dict(state.channels)
    channels[chan] = rest

    classical = dict(state.classical)
    ext = dict(state.ext)
    if msg.marker is None:
        sigma = copy.deepcopy(classical[receiver])
        sigma.setdefault("inbox", []).append([chan, copy.deepcopy(msg.classical)])
        classical[receiver] = sigma
    if msg.pending is not None:
        # A recorded outcome travelling with the message lands in the
        # receiver's channel record, exactly as if it had been recorded
        # on reception.
        from .qgo import append_record  # local import to avoid a cycle
        ext[receiver] = append_record(ext[receiver], chan, msg.pending)
        msg = replace(msg, pending=None)

    new_state = replace(state, classical=classical, ext=ext, channels=channels, ownership=ownership)
    return new_state, msg


def apply_local(
    state: SystemState,
    proc: str,
    qop: QuantumOperation | None,
    in_regs: tuple[RegisterId, ...],
    out_regs: tuple[RegisterId, ...],
    outcome: str,
    target_msg: int | None = None,
) -> SystemState:
    """Apply one outcome of a local operation and update the quantum state.

    When ``target_msg`` names an in-flight message, the operation acts on
    that message's registers and the outcome is parked in its pending slot;
    otherwise the registers must belong to ``proc`` (or to the named message
    already delivered to ``proc``).  Classical updates are applied by the
    caller, which knows the event's classical-update descriptor.
    """
    msg_in_flight = None
    if target_msg is not None:
        msg_in_flight = state.find_message(target_msg)

    required_owner = proc
    if msg_in_flight is not None:
        required_owner = msg_in_flight.owner_token
    for reg in in_regs:
        if state.ownership.get(reg) != required_owner:
            raise LocalityViolation(
                f"register {reg} not owned by {required_owner} (owner: "
                f"{state.ownership.get(reg)})"
            )

    if qop is None:
        quantum = state.quantum
        ownership = dict(state.ownership)
    else:
        regmap = RegisterMap(in_regs, out_regs)
        quantum = qcore.apply_outcome(state.quantum, qop, regmap, outcome)
        ownership = dict(state.ownership)
        for reg in in_regs:
            if reg not in out_regs:
                del ownership[reg]
        for reg in out_regs:
            if reg not in in_regs:
                ownership[reg] = required_owner

    new_state = replace(state, quantum=quantum, ownership=ownership)
    if msg_in_flight is not None:
        new_state = _set_message_pending(new_state, target_msg, outcome)
    return new_state


def _set_message_pending(state: SystemState, msg_id: int, outcome: str) -> SystemState:
    channels = dict(state.channels)
    for key, contents in channels.items():
        for i, m in enumerate(contents):
            if m.msg_id == msg_id:
                updated = replace(m, pending=outcome)
                channels[key] = contents[:i] + (updated,) + contents[i + 1:]
                return replace(state, channels=channels)
    raise SysmodelError(f"message {msg_id} not found in any channel")


def _channels_structurally_equal(a, b) -> bool:
    if set(a) != set(b):
        return False
    for key in a:
        if len(a[key]) != len(b[key]):
            return False
        for m1, m2 in zip(a[key], b[key]):
            if (m1.msg_id, m1.src, m1.dst, m1.marker, m1.pending) != (
                m2.msg_id, m2.src, m2.dst, m2.marker, m2.pending
            ):
                return False
            if m1.classical != m2.classical or m1.quantum_regs != m2.quantum_regs:
                return False
    return True


def states_equal(a: SystemState, b: SystemState, tol: float) -> bool:
    """Structural equality of the classical side, quantum within ``tol``."""
    if a.procs != b.procs:
        return False
    if dict(a.classical) != dict(b.classical):
        return False
    if dict(a.ext) != dict(b.ext):
        return False
    if not _channels_structurally_equal(a.channels, b.channels):
        return False
    if dict(a.ownership) != dict(b.ownership):
        return False
    ca = qcore.canonical_form(a.quantum)
    cb = qcore.canonical_form(b.quantum)
    if ca.space.registers != cb.space.registers:
        return False
    return bool(np.allclose(ca.entries, cb.entries, atol=tol, rtol=0))


def states_identical(a: SystemState, b: SystemState) -> bool:
    """Bitwise equality, used for fragment concatenation boundaries."""
    return (
        states_equal(a, b, 0.0)
        and a.quantum.space.registers == b.quantum.space.registers
        and np.array_equal(a.quantum.entries, b.quantum.entries)
    )
