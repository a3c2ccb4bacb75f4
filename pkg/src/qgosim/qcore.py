"""Dense complex linear algebra over a dynamically labeled tensor-product register space.

States are subnormalized density matrices: Hermitian, positive semidefinite,
trace at most one.  The trace of a state carries the probability of the
measurement-outcome history that produced it.  Basis indices decompose
big-endian in register-list order, so ``np.kron`` in list order is the
canonical tensor product.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "NO_OUTCOME",
    "RegisterId",
    "RegisterAllocator",
    "RegisterSpace",
    "DensityMatrix",
    "QuantumOperation",
    "RegisterMap",
    "ValidationReport",
    "IdCollision",
    "UnknownRegister",
    "BadOutcome",
    "ShapeError",
    "ZeroProbabilityHistory",
    "CapacityError",
    "tensor_product",
    "partial_trace",
    "apply_outcome",
    "sample_outcome",
    "validate_operation",
    "canonical_form",
    "standard_basis_measurement",
    "unitary_channel",
    "identity_operation",
    "relabel_outcomes",
    "dim_cap",
]

# Outcome label meaning "no measurement was performed".
NO_OUTCOME = "⊥"

# Tolerance for validation of accumulated quantities (hermiticity, PSD,
# trace preservation) versus freshly computed algebraic identities.
EPS_VALIDATE = 1e-9
EPS_EXACT = 1e-12

DEFAULT_DIM_CAP = 4096


def dim_cap() -> int:
    """Global cap on the total dimension of a register space.

    Overridable through the QGO_DIM_CAP environment variable.
    """
    return int(os.environ.get("QGO_DIM_CAP", DEFAULT_DIM_CAP))


class QcoreError(Exception):
    """Base class for register-space and operator errors."""


class IdCollision(QcoreError):
    """A register id appears more than once in a space."""


class UnknownRegister(QcoreError):
    """A referenced register is not part of the space."""


class BadOutcome(QcoreError):
    """Outcome label not in the operation's outcome set."""


class ShapeError(QcoreError):
    """Operator dimensions are incompatible with the mapped registers."""


class ZeroProbabilityHistory(QcoreError):
    """An operation was applied to a state of (numerically) zero trace."""


class CapacityError(QcoreError):
    """The configured total-dimension cap would be exceeded."""


@dataclass(frozen=True, order=True)
class RegisterId:
    """A stable, globally unique label for one tensor factor."""

    id: int
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ShapeError(f"register dimension must be >= 1, got {self.dim}")


class RegisterAllocator:
    """Hands out register ids from a monotonic counter; ids are never reused."""

    def __init__(self, start: int = 0):
        self._next = start

    def fresh(self, dim: int) -> RegisterId:
        reg = RegisterId(self._next, dim)
        self._next += 1
        return reg

    @property
    def next_id(self) -> int:
        return self._next


@dataclass(frozen=True)
class RegisterSpace:
    """An ordered list of registers; the joint space is their tensor product."""

    registers: tuple[RegisterId, ...]

    def __post_init__(self):
        object.__setattr__(self, "registers", tuple(self.registers))
        ids = [r.id for r in self.registers]
        if len(set(ids)) != len(ids):
            raise IdCollision(f"duplicate register ids in {ids}")
        if self.total_dim > dim_cap():
            raise CapacityError(
                f"total dimension {self.total_dim} exceeds cap {dim_cap()}"
            )

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(r.dim for r in self.registers)

    @property
    def total_dim(self) -> int:
        d = 1
        for r in self.registers:
            d *= r.dim
        return d

    def index_of(self, reg: RegisterId) -> int:
        try:
            return self.registers.index(reg)
        except ValueError:
            raise UnknownRegister(f"register {reg} not in space") from None

    def __contains__(self, reg: RegisterId) -> bool:
        return reg in self.registers


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Subnormalized density matrix over a register space."""

    space: RegisterSpace
    entries: np.ndarray

    def __post_init__(self):
        d = self.space.total_dim
        if self.entries.shape != (d, d):
            raise ShapeError(
                f"entries shape {self.entries.shape} does not match dim {d}"
            )
        object.__setattr__(
            self, "entries", np.ascontiguousarray(self.entries, dtype=np.complex128)
        )

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.entries)))

    def validate(self, eps: float = EPS_VALIDATE) -> None:
        """Raise if the matrix is not Hermitian, PSD, and subnormalized."""
        if not np.allclose(self.entries, self.entries.conj().T, atol=eps, rtol=0):
            raise ShapeError("matrix is not Hermitian within tolerance")
        evals = np.linalg.eigvalsh(self.entries)
        if evals.min(initial=0.0) < -eps:
            raise ShapeError(f"matrix has eigenvalue {evals.min()} below -{eps}")
        if not (-eps <= self.trace <= 1 + eps):
            raise ShapeError(f"trace {self.trace} outside [0, 1]")

    @classmethod
    def from_vector(cls, space: RegisterSpace, vec: Sequence[complex]) -> "DensityMatrix":
        v = np.asarray(vec, dtype=np.complex128).reshape(-1)
        if v.shape[0] != space.total_dim:
            raise ShapeError("vector length does not match space dimension")
        return cls(space, np.outer(v, v.conj()))

    @classmethod
    def basis_state(cls, space: RegisterSpace, index: int = 0) -> "DensityMatrix":
        v = np.zeros(space.total_dim, dtype=np.complex128)
        v[index] = 1.0
        return cls.from_vector(space, v)

    @classmethod
    def maximally_mixed(cls, space: RegisterSpace) -> "DensityMatrix":
        d = space.total_dim
        return cls(space, np.eye(d, dtype=np.complex128) / d)

    @classmethod
    def empty(cls) -> "DensityMatrix":
        """The trivial state over zero registers (a 1x1 matrix holding 1)."""
        return cls(RegisterSpace(()), np.array([[1.0 + 0j]]))


@dataclass(frozen=True, eq=False)
class QuantumOperation:
    """A quantum operation with a classical outcome set, in Kraus form.

    ``kraus_by_outcome[r]`` lists the Kraus matrices of the CP map for outcome
    ``r``; the sum over all outcomes must be trace preserving.  ``in_dims`` and
    ``out_dims`` are the local dimensions of the operation's input and output
    slots; they may differ, letting an operation grow or shrink the system.
    """

    outcome_set: tuple[str, ...]
    kraus_by_outcome: Mapping[str, tuple[np.ndarray, ...]]
    in_dims: tuple[int, ...]
    out_dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "outcome_set", tuple(self.outcome_set))
        object.__setattr__(self, "in_dims", tuple(self.in_dims))
        object.__setattr__(self, "out_dims", tuple(self.out_dims))
        din = int(np.prod(self.in_dims)) if self.in_dims else 1
        dout = int(np.prod(self.out_dims)) if self.out_dims else 1
        fixed = {}
        for r in self.outcome_set:
            ks = tuple(
                np.ascontiguousarray(k, dtype=np.complex128)
                for k in self.kraus_by_outcome[r]
            )
            for k in ks:
                if k.shape != (dout, din):
                    raise ShapeError(
                        f"Kraus matrix shape {k.shape} incompatible with "
                        f"in dim {din}, out dim {dout}"
                    )
            fixed[r] = ks
        object.__setattr__(self, "kraus_by_outcome", fixed)

    @property
    def in_dim(self) -> int:
        return int(np.prod(self.in_dims)) if self.in_dims else 1

    @property
    def out_dim(self) -> int:
        return int(np.prod(self.out_dims)) if self.out_dims else 1


@dataclass(frozen=True)
class RegisterMap:
    """Assignment of an operation's slots to registers of a space.

    ``in_regs`` name the registers the operation consumes, in slot order.
    ``out_regs`` name the registers that replace them; they default to the
    inputs when the operation does not change dimensions.
    """

    in_regs: tuple[RegisterId, ...]
    out_regs: tuple[RegisterId, ...] = None  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "in_regs", tuple(self.in_regs))
        if self.out_regs is None:
            object.__setattr__(self, "out_regs", self.in_regs)
        else:
            object.__setattr__(self, "out_regs", tuple(self.out_regs))
        if len({r.id for r in self.in_regs}) != len(self.in_regs):
            raise IdCollision("register map inputs must be injective")
        if len({r.id for r in self.out_regs}) != len(self.out_regs):
            raise IdCollision("register map outputs must be injective")


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    trace_preserving: bool
    max_deviation: float
    completely_positive: bool = True  # Kraus form is CP by construction
    note: str = ""


def tensor_product(a: DensityMatrix, b: DensityMatrix) -> DensityMatrix:
    """Kronecker product of two states; register lists are concatenated."""
    shared = {r.id for r in a.space.registers} & {r.id for r in b.space.registers}
    if shared:
        raise IdCollision(f"register ids {sorted(shared)} appear on both sides")
    space = RegisterSpace(a.space.registers + b.space.registers)
    return DensityMatrix(space, np.kron(a.entries, b.entries))


def _basis_permutation(dims: Sequence[int], order: Sequence[int]) -> np.ndarray:
    """Index array mapping permuted-register basis indices to original ones.

    ``perm[j]`` is the original flat index of the j-th basis vector of the
    space whose registers are reordered by ``order``.
    """
    n = len(dims)
    if n == 0:
        return np.array([0], dtype=np.intp)
    idx = np.arange(int(np.prod(dims))).reshape(dims)
    return np.ascontiguousarray(np.transpose(idx, order)).reshape(-1)


def partial_trace(rho: DensityMatrix, discard: Iterable[RegisterId]) -> DensityMatrix:
    """Trace out the given registers, returning the reduced state."""
    discard = list(discard)
    for reg in discard:
        if reg not in rho.space:
            raise UnknownRegister(f"register {reg} not in space")
    regs = list(rho.space.registers)
    mat = rho.entries
    for reg in discard:
        k = regs.index(reg)
        dims = [r.dim for r in regs]
        p = int(np.prod(dims[:k])) if k else 1
        d = dims[k]
        s = int(np.prod(dims[k + 1:])) if k + 1 < len(dims) else 1
        m6 = mat.reshape(p, d, s, p, d, s)
        mat = np.einsum("aibcid->abcd", m6).reshape(p * s, p * s)
        regs.pop(k)
    return DensityMatrix(RegisterSpace(tuple(regs)), mat)


def _embed_front(rho: DensityMatrix, mapped: Sequence[RegisterId]):
    """Permute the state so the mapped registers come first, in slot order."""
    regs = list(rho.space.registers)
    positions = [regs.index(r) for r in mapped]
    rest = [i for i in range(len(regs)) if i not in positions]
    order = positions + rest
    perm = _basis_permutation([r.dim for r in regs], order)
    front = rho.entries[np.ix_(perm, perm)]
    rest_regs = [regs[i] for i in rest]
    return front, rest_regs


def apply_outcome(
    rho: DensityMatrix,
    op: QuantumOperation,
    regmap: RegisterMap,
    outcome: str,
) -> DensityMatrix:
    """Apply the CP map for one outcome to the mapped registers.

    The result is subnormalized: its trace is the probability of the outcome
    given ``rho``.  Output registers replace the inputs; when dimensions are
    unchanged the register order of the space is preserved exactly, otherwise
    the output registers are placed first followed by the untouched rest.
    """
    if outcome not in op.outcome_set:
        raise BadOutcome(f"outcome {outcome!r} not in {op.outcome_set}")
    if tuple(r.dim for r in regmap.in_regs) != op.in_dims:
        raise ShapeError("mapped register dims do not match operation input dims")
    if tuple(r.dim for r in regmap.out_regs) != op.out_dims:
        raise ShapeError("output register dims do not match operation output dims")
    for reg in regmap.in_regs:
        if reg not in rho.space:
            raise UnknownRegister(f"register {reg} not in space")
    for reg in regmap.out_regs:
        if reg not in regmap.in_regs and reg in rho.space:
            raise IdCollision(f"output register {reg} already present in space")

    front, rest_regs = _embed_front(rho, regmap.in_regs)
    rest_dim = 1
    for r in rest_regs:
        rest_dim *= r.dim
    eye = np.eye(rest_dim, dtype=np.complex128)
    out = np.zeros(
        (op.out_dim * rest_dim, op.out_dim * rest_dim), dtype=np.complex128
    )
    for k in op.kraus_by_outcome[outcome]:
        big = np.kron(k, eye)
        out += big @ front @ big.conj().T

    out_regs = list(regmap.out_regs)
    if regmap.out_regs == regmap.in_regs:
        # Restore the original register order of the space.
        orig = list(rho.space.registers)
        cur = out_regs + rest_regs
        order = [cur.index(r) for r in orig]
        perm = _basis_permutation([r.dim for r in cur], order)
        out = out[np.ix_(perm, perm)]
        return DensityMatrix(rho.space, out)
    return DensityMatrix(RegisterSpace(tuple(out_regs + rest_regs)), out)


def sample_outcome(
    rho: DensityMatrix,
    op: QuantumOperation,
    regmap: RegisterMap,
    rng: np.random.Generator,
) -> tuple[str, DensityMatrix]:
    """Draw an outcome with its physical probability and return the new state.

    The returned state is not renormalized; its trace is the joint probability
    of the full outcome history so far.
    """
    tr = rho.trace
    if tr <= 1e-15:
        raise ZeroProbabilityHistory(f"state trace {tr} is numerically zero")
    results = {r: apply_outcome(rho, op, regmap, r) for r in op.outcome_set}
    probs = np.array([max(results[r].trace, 0.0) for r in op.outcome_set])
    probs = probs / probs.sum()
    choice = rng.choice(len(op.outcome_set), p=probs)
    r = op.outcome_set[choice]
    return r, results[r]


def validate_operation(op: QuantumOperation, eps: float = EPS_VALIDATE) -> ValidationReport:
    """Check trace preservation of the summed map.

    Complete positivity holds by construction of the Kraus representation,
    so only the resolution of identity is tested numerically.
    """
    acc = np.zeros((op.in_dim, op.in_dim), dtype=np.complex128)
    for r in op.outcome_set:
        for k in op.kraus_by_outcome[r]:
            acc += k.conj().T @ k
    dev = float(np.abs(acc - np.eye(op.in_dim)).max())
    tp = dev <= eps
    note = "" if tp else f"sum of K†K deviates from identity by {dev:.3e}"
    return ValidationReport(valid=tp, trace_preserving=tp, max_deviation=dev, note=note)


def canonical_form(rho: DensityMatrix) -> DensityMatrix:
    """Sort registers by id and permute the entries accordingly; idempotent."""
    regs = list(rho.space.registers)
    order = sorted(range(len(regs)), key=lambda i: regs[i].id)
    if order == list(range(len(regs))):
        return rho
    perm = _basis_permutation([r.dim for r in regs], order)
    return DensityMatrix(
        RegisterSpace(tuple(regs[i] for i in order)),
        rho.entries[np.ix_(perm, perm)],
    )


def standard_basis_measurement(dims: Sequence[int]) -> QuantumOperation:
    """Projective measurement of every slot in the computational basis.

    Outcomes are big-endian digit strings over the slot dimensions, e.g.
    "01" for a two-qubit measurement.
    """
    dims = tuple(dims)
    total = int(np.prod(dims)) if dims else 1
    outcomes = []
    kraus = {}
    for flat in range(total):
        digits = []
        rem = flat
        for d in reversed(dims):
            digits.append(rem % d)
            rem //= d
        label = "".join(str(x) for x in reversed(digits))
        proj = np.zeros((total, total), dtype=np.complex128)
        proj[flat, flat] = 1.0
        outcomes.append(label)
        kraus[label] = (proj,)
    return QuantumOperation(tuple(outcomes), kraus, dims, dims)


def unitary_channel(u: np.ndarray, dims: Sequence[int] | None = None) -> QuantumOperation:
    """Deterministic operation applying a unitary; single outcome ⊥."""
    u = np.asarray(u, dtype=np.complex128)
    if dims is None:
        dims = (u.shape[0],)
    return QuantumOperation((NO_OUTCOME,), {NO_OUTCOME: (u,)}, tuple(dims), tuple(dims))


def identity_operation(dims: Sequence[int]) -> QuantumOperation:
    dims = tuple(dims)
    total = int(np.prod(dims)) if dims else 1
    return unitary_channel(np.eye(total, dtype=np.complex128), dims)


def relabel_outcomes(op: QuantumOperation, fn) -> QuantumOperation:
    """Rename outcome labels with ``fn``; the maps themselves are unchanged."""
    outcomes = tuple(fn(r) for r in op.outcome_set)
    if len(set(outcomes)) != len(outcomes):
        raise BadOutcome("relabeling must be injective")
    kraus = {fn(r): op.kraus_by_outcome[r] for r in op.outcome_set}
    return QuantumOperation(outcomes, kraus, op.in_dims, op.out_dims)


# Single-qubit Pauli matrices, used by the one-time-pad operation library.
PAULIS = {
    "I": np.eye(2, dtype=np.complex128),
    "X": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "Z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}


def pauli_string_matrix(s: str) -> np.ndarray:
    m = np.array([[1.0 + 0j]])
    for ch in s:
        m = np.kron(m, PAULIS[ch])
    return m


def pauli_pad_operation(n_qubits: int) -> QuantumOperation:
    """Uniformly random Pauli one-time pad on ``n_qubits`` qubits.

    Each outcome is a Pauli string (the sampled key); every key occurs with
    probability 4^-n, carried by the 2^-n scaling of the Kraus matrices.
    """
    if n_qubits == 0:
        return identity_operation(())
    keys = [""]
    for _ in range(n_qubits):
        keys = [k + p for k in keys for p in "IXYZ"]
    scale = 1.0 / (2 ** n_qubits)
    kraus = {k: (scale * pauli_string_matrix(k),) for k in keys}
    dims = (2,) * n_qubits
    return QuantumOperation(tuple(keys), kraus, dims, dims)
