"""Base distributed algorithms and scenario construction.

A base algorithm exposes the actions each processor can take in a given
state and builds the corresponding event block; the scheduler picks among
them.  Receptions are not base actions — they are driven by the scheduler
through the marker-protocol reception handler.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .. import qcore, qgo, sysmodel
from ..executions import Apply, ClassicalUpdate, Event, Send, register_update
from ..qcore import NO_OUTCOME, DensityMatrix, RegisterAllocator, RegisterSpace
from ..qgo import GenContext, LocalOpSpec, choose_outcome
from ..sysmodel import MessageInstance, SystemState


class UnknownScenario(Exception):
    pass


@dataclass
class ScenarioConfig:
    base: str
    procs: int = 2
    base_params: dict = field(default_factory=dict)
    # Each entry: {"gid": ..., "leader": ..., "after_step": int}
    invocations: list = field(default_factory=list)
    policy: str = "uniform-random"
    seed: int = 0
    fairness: int = 50
    max_steps: int = 2000

    def to_dict(self) -> dict:
        return {
            "base": self.base,
            "procs": self.procs,
            "base_params": dict(self.base_params),
            "invocations": [dict(i) for i in self.invocations],
            "policy": self.policy,
            "seed": self.seed,
            "fairness": self.fairness,
            "max_steps": self.max_steps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        return cls(**{k: d[k] for k in d if k in cls.__dataclass_fields__})


def proc_names(n: int) -> list[str]:
    return [f"p{i}" for i in range(n)]


class BaseAlgorithm:
    name: str

    def initial(self, cfg: ScenarioConfig) -> SystemState:
        raise NotImplementedError

    def enabled(self, state: SystemState, proc: str) -> list[str]:
        raise NotImplementedError

    def build(self, state: SystemState, proc: str, action: str, ctx: GenContext) -> list[Event]:
        raise NotImplementedError

    def allows(self, pre: SystemState, event: Event, post: SystemState) -> bool:
        """Local step predicate: does the algorithm permit this event?"""
        raise NotImplementedError


def _classical_initial(cfg: ScenarioConfig, sigmas: dict) -> SystemState:
    procs = proc_names(cfg.procs)
    return sysmodel.initial_state(
        procs,
        sigmas,
        DensityMatrix.empty(),
        {},
        ext={p: qgo.idle_ext() for p in procs},
    )


def _inbox_entries(sigma, kind: str):
    return [e for e in sigma.get("inbox", []) if isinstance(e[1], dict) and e[1].get("kind") == kind]


# ---------------------------------------------------------------------------
# empty: no base activity at all
# ---------------------------------------------------------------------------

class EmptyAlgorithm(BaseAlgorithm):
    name = "empty"

    def initial(self, cfg):
        procs = proc_names(cfg.procs)
        qubits = int(cfg.base_params.get("qubits_per_proc", 0))
        alloc = RegisterAllocator()
        regs, ownership = [], {}
        for p in procs:
            for _ in range(qubits):
                r = alloc.fresh(2)
                regs.append(r)
                ownership[r] = p
        if regs:
            quantum = DensityMatrix.basis_state(RegisterSpace(tuple(regs)))
        else:
            quantum = DensityMatrix.empty()
        return sysmodel.initial_state(
            procs, {p: {"inbox": []} for p in procs}, quantum, ownership,
            ext={p: qgo.idle_ext() for p in procs},
        )

    def enabled(self, state, proc):
        return []

    def build(self, state, proc, action, ctx):
        raise UnknownScenario(f"empty algorithm has no action {action!r}")

    def allows(self, pre, event, post):
        return False


# ---------------------------------------------------------------------------
# token ring: a classical token circulates for a bounded number of hops
# ---------------------------------------------------------------------------

@register_update("token.pass")
def _token_pass(sigma, ext, outcome, params):
    sigma["has_token"] = False
    return sigma, ext


@register_update("token.take")
def _token_take(sigma, ext, outcome, params):
    inbox = sigma.get("inbox", [])
    for i, entry in enumerate(inbox):
        if isinstance(entry[1], dict) and entry[1].get("kind") == "token":
            sigma["has_token"] = True
            sigma["hops"] = entry[1]["hops"]
            del inbox[i]
            return sigma, ext
    raise KeyError("no token in inbox")


class TokenRing(BaseAlgorithm):
    """p0 starts with the token; each holder passes it to the next
    processor on the ring until it has travelled ``max_hops`` hops."""

    name = "token-ring"

    def initial(self, cfg):
        procs = proc_names(cfg.procs)
        max_hops = int(cfg.base_params.get("max_hops", cfg.procs))
        sigmas = {
            p: {"inbox": [], "has_token": p == "p0", "hops": 0, "max_hops": max_hops}
            for p in procs
        }
        qubits = int(cfg.base_params.get("qubits_per_proc", 0))
        epr = cfg.base_params.get("epr_pair", False)
        alloc = RegisterAllocator()
        regs, ownership = [], {}
        for p in procs:
            for _ in range(qubits):
                r = alloc.fresh(2)
                regs.append(r)
                ownership[r] = p
        if epr and cfg.procs >= 2:
            ra, rb = alloc.fresh(2), alloc.fresh(2)
            regs += [ra, rb]
            ownership[ra] = "p0"
            ownership[rb] = "p1"
        if regs:
            dim = int(np.prod([r.dim for r in regs]))
            vec = np.zeros(dim, complex)
            if epr and cfg.procs >= 2:
                # |0..0> on local qubits, EPR on the last two registers.
                vec[0] = 1 / np.sqrt(2)
                vec[3] = 1 / np.sqrt(2)
            else:
                vec[0] = 1.0
            quantum = DensityMatrix.from_vector(RegisterSpace(tuple(regs)), vec)
        else:
            quantum = DensityMatrix.empty()
        return sysmodel.initial_state(
            procs, sigmas, quantum, ownership,
            ext={p: qgo.idle_ext() for p in procs},
        )

    def _next(self, procs, proc):
        i = procs.index(proc)
        return procs[(i + 1) % len(procs)]

    def enabled(self, state, proc):
        sigma = state.classical[proc]
        actions = []
        if sigma.get("has_token") and sigma["hops"] < sigma["max_hops"]:
            actions.append("pass")
        if _inbox_entries(sigma, "token"):
            actions.append("take")
        return actions

    def build(self, state, proc, action, ctx):
        sigma = state.classical[proc]
        if action == "pass":
            dest = self._next(list(state.procs), proc)
            msg = MessageInstance(
                msg_id=ctx.msg_id(), src=proc, dst=dest,
                classical={"kind": "token", "hops": sigma["hops"] + 1},
            )
            return [Send(eid=ctx.eid(), label=proc, msg=msg,
                         update=ClassicalUpdate("token.pass"))]
        if action == "take":
            return [Apply(eid=ctx.eid(), label=proc, proc=proc, name="token.take",
                          outcome=NO_OUTCOME, update=ClassicalUpdate("token.take"))]
        raise UnknownScenario(f"token ring has no action {action!r}")

    def allows(self, pre, event, post):
        sigma = pre.classical[event.label]
        if isinstance(event, Send):
            return (
                event.update == ClassicalUpdate("token.pass")
                and sigma.get("has_token")
                and sigma["hops"] < sigma["max_hops"]
                and event.msg.classical == {"kind": "token", "hops": sigma["hops"] + 1}
                and event.msg.dst == self._next(list(pre.procs), event.label)
                and event.msg.quantum_regs == ()
            )
        if isinstance(event, Apply):
            return (
                event.name == "token.take"
                and event.qop is None
                and bool(_inbox_entries(sigma, "token"))
            )
        return False


# ---------------------------------------------------------------------------
# teleport: p0 teleports a data qubit to p1
# ---------------------------------------------------------------------------

@register_update("tp.sent_half")
def _tp_sent_half(sigma, ext, outcome, params):
    sigma["phase"] = "measure"
    return sigma, ext


@register_update("tp.measured")
def _tp_measured(sigma, ext, outcome, params):
    sigma["meas"] = outcome
    sigma["phase"] = "send_fix"
    return sigma, ext


@register_update("tp.sent_fix")
def _tp_sent_fix(sigma, ext, outcome, params):
    sigma["phase"] = "done"
    return sigma, ext


@register_update("tp.got_half")
def _tp_got_half(sigma, ext, outcome, params):
    inbox = sigma["inbox"]
    for i, entry in enumerate(inbox):
        if isinstance(entry[1], dict) and entry[1].get("kind") == "epr-half":
            del inbox[i]
            sigma["phase"] = "wait_fix"
            return sigma, ext
    raise KeyError("no epr half in inbox")


@register_update("tp.fixed")
def _tp_fixed(sigma, ext, outcome, params):
    inbox = sigma["inbox"]
    for i, entry in enumerate(inbox):
        if isinstance(entry[1], dict) and entry[1].get("kind") == "fix":
            del inbox[i]
            sigma["phase"] = "done"
            return sigma, ext
    raise KeyError("no fix in inbox")


_BELL_VECS = {}
for _a in (0, 1):
    for _b in (0, 1):
        v = np.zeros(4, complex)
        v[_b] = 1 / np.sqrt(2)                     # |0, b>
        v[2 + (1 - _b)] = (-1) ** _a / np.sqrt(2)  # |1, 1-b>
        _BELL_VECS[f"{_a}{_b}"] = v


def bell_measurement() -> qcore.QuantumOperation:
    kraus = {lab: (np.outer(v, v.conj()),) for lab, v in _BELL_VECS.items()}
    return qcore.QuantumOperation(tuple(sorted(kraus)), kraus, (2, 2), (2, 2))


def correction_unitary(bits: str) -> np.ndarray:
    a, b = int(bits[0]), int(bits[1])
    x, z = qcore.PAULIS["X"], qcore.PAULIS["Z"]
    return np.linalg.matrix_power(z, a) @ np.linalg.matrix_power(x, b)


class Teleport(BaseAlgorithm):
    """Two processors; p0 sends one half of an entangled pair, measures its
    data qubit with that pair in the Bell basis, and sends the correction
    bits; p1 applies the correction to the received half."""

    name = "teleport"

    def initial(self, cfg):
        if cfg.procs != 2:
            raise UnknownScenario("teleport needs exactly 2 processors")
        alloc = RegisterAllocator()
        d, e1, e2 = alloc.fresh(2), alloc.fresh(2), alloc.fresh(2)
        amps = cfg.base_params.get("data_state", [0.6, [0.0, 0.8]])
        a0 = complex(amps[0]) if np.isscalar(amps[0]) else complex(amps[0][0], amps[0][1])
        a1 = complex(amps[1]) if np.isscalar(amps[1]) else complex(amps[1][0], amps[1][1])
        psi = np.array([a0, a1], complex)
        psi /= np.linalg.norm(psi)
        epr = np.zeros(4, complex)
        epr[0] = epr[3] = 1 / np.sqrt(2)
        vec = np.kron(psi, epr)
        quantum = DensityMatrix.from_vector(RegisterSpace((d, e1, e2)), vec)
        sigmas = {
            "p0": {"inbox": [], "phase": "send_half"},
            "p1": {"inbox": [], "phase": "wait_half"},
        }
        return sysmodel.initial_state(
            ("p0", "p1"), sigmas, quantum,
            {d: "p0", e1: "p0", e2: "p0"},
            ext={p: qgo.idle_ext() for p in ("p0", "p1")},
        )

    def enabled(self, state, proc):
        sigma = state.classical[proc]
        phase = sigma.get("phase")
        if proc == "p0":
            if phase in ("send_half", "measure", "send_fix"):
                return [phase]
            return []
        if phase == "wait_half" and _inbox_entries(sigma, "epr-half"):
            return ["consume_half"]
        if phase == "wait_fix" and _inbox_entries(sigma, "fix"):
            return ["apply_fix"]
        return []

    def build(self, state, proc, action, ctx):
        sigma = state.classical[proc]
        if action == "send_half":
            regs = state.owned_by("p0")
            half = regs[-1]  # the highest-id register is the shared half
            msg = MessageInstance(
                msg_id=ctx.msg_id(), src="p0", dst="p1",
                classical={"kind": "epr-half"}, quantum_regs=(half,),
            )
            return [Send(eid=ctx.eid(), label="p0", msg=msg,
                         update=ClassicalUpdate("tp.sent_half"))]
        if action == "measure":
            regs = state.owned_by("p0")[:2]
            spec = LocalOpSpec(bell_measurement(), regs, regs)
            outcome = choose_outcome(state, spec, ctx)
            return [Apply(eid=ctx.eid(), label="p0", proc="p0", name="tp.bell",
                          outcome=outcome, qop=spec.qop, in_regs=regs, out_regs=regs,
                          update=ClassicalUpdate("tp.measured"))]
        if action == "send_fix":
            msg = MessageInstance(
                msg_id=ctx.msg_id(), src="p0", dst="p1",
                classical={"kind": "fix", "bits": sigma["meas"]},
            )
            return [Send(eid=ctx.eid(), label="p0", msg=msg,
                         update=ClassicalUpdate("tp.sent_fix"))]
        if action == "consume_half":
            return [Apply(eid=ctx.eid(), label="p1", proc="p1", name="tp.got_half",
                          outcome=NO_OUTCOME, update=ClassicalUpdate("tp.got_half"))]
        if action == "apply_fix":
            bits = _inbox_entries(sigma, "fix")[0][1]["bits"]
            regs = state.owned_by("p1")
            qop = qcore.relabel_outcomes(
                qcore.unitary_channel(correction_unitary(bits), [2]), lambda _: bits
            )
            return [Apply(eid=ctx.eid(), label="p1", proc="p1", name="tp.fix",
                          outcome=bits, qop=qop, in_regs=regs, out_regs=regs,
                          update=ClassicalUpdate("tp.fixed"))]
        raise UnknownScenario(f"teleport has no action {action!r}")

    def allows(self, pre, event, post):
        sigma = pre.classical[event.label]
        if isinstance(event, Send):
            if event.update == ClassicalUpdate("tp.sent_half"):
                return sigma.get("phase") == "send_half" and len(event.msg.quantum_regs) == 1
            if event.update == ClassicalUpdate("tp.sent_fix"):
                return (
                    sigma.get("phase") == "send_fix"
                    and event.msg.classical == {"kind": "fix", "bits": sigma["meas"]}
                )
            return False
        if isinstance(event, Apply):
            if event.name == "tp.bell":
                return sigma.get("phase") == "measure"
            if event.name == "tp.got_half":
                return sigma.get("phase") == "wait_half" and bool(
                    _inbox_entries(sigma, "epr-half")
                )
            if event.name == "tp.fix":
                return sigma.get("phase") == "wait_fix" and bool(
                    _inbox_entries(sigma, "fix")
                )
        return False


# ---------------------------------------------------------------------------
# ping: a fixed number of one-way classical messages, for tiny executions
# ---------------------------------------------------------------------------

@register_update("pp.sent")
def _pp_sent(sigma, ext, outcome, params):
    sigma["sent"] += 1
    return sigma, ext


class Ping(BaseAlgorithm):
    """p0 sends ``n_msgs`` classical messages to p1, which only receives."""

    name = "ping"

    def initial(self, cfg):
        procs = proc_names(cfg.procs)
        sigmas = {p: {"inbox": []} for p in procs}
        sigmas["p0"]["sent"] = 0
        sigmas["p0"]["n_msgs"] = int(cfg.base_params.get("n_msgs", 1))
        return _classical_initial(cfg, sigmas)

    def enabled(self, state, proc):
        sigma = state.classical[proc]
        if proc == "p0" and sigma["sent"] < sigma["n_msgs"]:
            return ["ping"]
        return []

    def build(self, state, proc, action, ctx):
        sigma = state.classical[proc]
        msg = MessageInstance(
            msg_id=ctx.msg_id(), src="p0", dst="p1",
            classical={"kind": "ping", "i": sigma["sent"]},
        )
        return [Send(eid=ctx.eid(), label="p0", msg=msg,
                     update=ClassicalUpdate("pp.sent"))]

    def allows(self, pre, event, post):
        sigma = pre.classical[event.label]
        return (
            isinstance(event, Send)
            and event.update == ClassicalUpdate("pp.sent")
            and sigma.get("sent", 0) < sigma.get("n_msgs", 0)
            and event.msg.classical == {"kind": "ping", "i": sigma["sent"]}
        )


BASE_ALGORITHMS = {
    a.name: a for a in (EmptyAlgorithm(), TokenRing(), Teleport(), Ping())
}


def build_scenario(cfg: ScenarioConfig):
    """Instantiate (initial state, base algorithm, global-op library)."""
    if cfg.base not in BASE_ALGORITHMS:
        raise UnknownScenario(f"unknown base algorithm {cfg.base!r}")
    base = BASE_ALGORITHMS[cfg.base]
    state = base.initial(cfg)
    gids = sorted({inv["gid"] for inv in cfg.invocations})
    library = qgo.global_op_library(gids)
    return state, base, library
