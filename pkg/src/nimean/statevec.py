"""Dense state-vector and unitary kernel.

Wire convention: qubit 0 is the most significant bit of a basis index, so the
basis state |b_0 b_1 ... b_{n-1}> sits at index sum(b_k * 2**(n-1-k)).
Registers written as |a>|b> therefore put ``a`` on the leading wires.

All objects are immutable; every operation returns a new value.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import PreconditionError, ShapeError, SizeError

MAX_QUBITS = 20
NORM_TOL = 1e-10
UNITARY_TOL = 1e-9

# Unitarity is checked with a dense spectral norm; skip above this size.
_CHECK_DIM_LIMIT = 1024


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


def _n_qubits_for(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 1 or (1 << n) != dim:
        raise ShapeError(f"dimension {dim} is not a power of two")
    return n


@dataclass(frozen=True)
class StateVector:
    """Amplitudes of an ``n_qubits`` register.

    ``normalized=False`` marks post-projection vectors whose norm carries a
    probability rather than being 1.
    """

    n_qubits: int
    amplitudes: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        amps = _frozen(self.amplitudes).reshape(-1)
        if amps.shape[0] != 1 << self.n_qubits:
            raise ShapeError(
                f"{amps.shape[0]} amplitudes do not match {self.n_qubits} qubits"
            )
        object.__setattr__(self, "amplitudes", amps)
        if self.normalized and abs(np.linalg.norm(amps) - 1.0) > NORM_TOL:
            raise PreconditionError(
                f"state marked normalized has norm {np.linalg.norm(amps):.3e}"
            )

    @classmethod
    def from_array(cls, amps, normalized: bool | None = None) -> "StateVector":
        amps = np.asarray(amps, dtype=complex).reshape(-1)
        if normalized is None:
            normalized = abs(np.linalg.norm(amps) - 1.0) <= NORM_TOL
        return cls(_n_qubits_for(amps.shape[0]), amps, normalized)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def marginal(self, wires: Sequence[int]) -> np.ndarray:
        """Probability distribution of the listed wires (in the listed order)."""
        wires = list(wires)
        t = self.probabilities().reshape([2] * self.n_qubits)
        rest = [w for w in range(self.n_qubits) if w not in wires]
        t = np.transpose(t, wires + rest).reshape(1 << len(wires), -1)
        return t.sum(axis=1)


@dataclass(frozen=True)
class UnitaryOp:
    """Dense unitary on ``n_qubits`` qubits."""

    n_qubits: int
    matrix: np.ndarray
    check: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        mat = _frozen(self.matrix)
        d = 1 << self.n_qubits
        if mat.shape != (d, d):
            raise ShapeError(f"matrix shape {mat.shape} does not match {self.n_qubits} qubits")
        object.__setattr__(self, "matrix", mat)
        if self.check and d <= _CHECK_DIM_LIMIT:
            err = unitarity_error(mat)
            if err > UNITARY_TOL:
                raise PreconditionError(f"matrix is not unitary: ||U^dag U - I|| = {err:.3e}")

    @classmethod
    def from_matrix(cls, mat, check: bool = True) -> "UnitaryOp":
        mat = np.asarray(mat, dtype=complex)
        return cls(_n_qubits_for(mat.shape[0]), mat, check)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, other: "UnitaryOp") -> "UnitaryOp":
        if self.n_qubits != other.n_qubits:
            raise ShapeError("cannot compose unitaries of different sizes")
        return UnitaryOp(self.n_qubits, self.matrix @ other.matrix, check=False)

    def column(self, j: int = 0) -> np.ndarray:
        return np.array(self.matrix[:, j])


@dataclass(frozen=True)
class Projector:
    """Orthogonal projector given by an orthonormal basis of its image."""

    basis: np.ndarray

    def __post_init__(self):
        b = np.array(self.basis, dtype=complex)
        if b.ndim == 1:
            b = b[:, None]
        if b.shape[1]:
            gram = b.conj().T @ b
            if np.max(np.abs(gram - np.eye(b.shape[1]))) > NORM_TOL:
                raise PreconditionError("projector basis is not orthonormal")
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @classmethod
    def computational(cls, n_qubits: int, indices: Sequence[int]) -> "Projector":
        d = 1 << n_qubits
        b = np.zeros((d, len(indices)), dtype=complex)
        for col, idx in enumerate(indices):
            b[idx, col] = 1.0
        return cls(b)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return self.basis @ self.basis.conj().T


# ---------------------------------------------------------------- gates

def gate(name: str) -> UnitaryOp:
    """Single-qubit textbook gates: I, X, Y, Z, H."""
    s = 1 / np.sqrt(2)
    mats = {
        "I": [[1, 0], [0, 1]],
        "X": [[0, 1], [1, 0]],
        "Y": [[0, -1j], [1j, 0]],
        "Z": [[1, 0], [0, -1]],
        "H": [[s, s], [s, -s]],
    }
    return UnitaryOp(1, np.array(mats[name], dtype=complex))


def ry(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def identity(n_qubits: int) -> UnitaryOp:
    return UnitaryOp(n_qubits, np.eye(1 << n_qubits, dtype=complex), check=False)


def kron(*ops: UnitaryOp) -> UnitaryOp:
    mat = np.array([[1.0 + 0j]])
    for op in ops:
        mat = np.kron(mat, op.matrix)
    return UnitaryOp(sum(op.n_qubits for op in ops), mat, check=False)


# ----------------------------------------------------------- operations

def zero_state(n_qubits: int) -> StateVector:
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise SizeError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
    amps = np.zeros(1 << n_qubits, dtype=complex)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def apply_matrix(mat: np.ndarray, amps: np.ndarray, n_qubits: int,
                 wires: Sequence[int]) -> np.ndarray:
    """Apply a 2^k x 2^k matrix to ``wires`` of a raw amplitude vector."""
    wires = list(wires)
    k = len(wires)
    if mat.shape != (1 << k, 1 << k):
        raise ShapeError(f"operator on {mat.shape[0]} dims does not fit {k} wires")
    if len(set(wires)) != k or any(not 0 <= w < n_qubits for w in wires):
        raise ShapeError(f"invalid wires {wires} for a {n_qubits}-qubit register")
    rest = [w for w in range(n_qubits) if w not in wires]
    perm = wires + rest
    t = np.transpose(amps.reshape([2] * n_qubits), perm).reshape(1 << k, -1)
    t = (mat @ t).reshape([2] * n_qubits)
    return np.transpose(t, np.argsort(perm)).reshape(-1)


def apply(u: UnitaryOp, s: StateVector, wires: Sequence[int] | None = None) -> StateVector:
    """Embed ``u`` on ``wires`` (default: all wires in order) and apply it to ``s``."""
    if wires is None:
        wires = range(s.n_qubits)
    out = apply_matrix(u.matrix, s.amplitudes, s.n_qubits, wires)
    return StateVector(s.n_qubits, out, s.normalized)


def controlled(u: UnitaryOp, n_controls: int = 1) -> UnitaryOp:
    """Controls occupy the leading wires; ``u`` fires when all of them are 1."""
    if n_controls < 1:
        raise PreconditionError("n_controls must be >= 1")
    d = u.dim
    total = d << n_controls
    mat = np.eye(total, dtype=complex)
    mat[total - d:, total - d:] = u.matrix
    return UnitaryOp(u.n_qubits + n_controls, mat, check=False)


def adjoint(u: UnitaryOp) -> UnitaryOp:
    return UnitaryOp(u.n_qubits, u.matrix.conj().T, check=False)


def project(p: Projector, s: StateVector) -> StateVector:
    """Unnormalized image of ``s`` under ``p``; its squared norm is the hit probability."""
    if p.dim != s.dim:
        raise ShapeError(f"projector dim {p.dim} != state dim {s.dim}")
    out = p.basis @ (p.basis.conj().T @ s.amplitudes)
    return StateVector(s.n_qubits, out, normalized=False)


def orthonormality_error(cols: np.ndarray) -> float:
    cols = np.atleast_2d(cols)
    return float(np.max(np.abs(cols.conj().T @ cols - np.eye(cols.shape[1]))))


def complete_to_unitary(partial_columns, seed: int | np.random.Generator) -> UnitaryOp:
    """Extend orthonormal columns to a unitary, leading columns kept verbatim.

    The missing columns come from seeded complex Gaussian vectors, orthogonalised
    against the given ones (two projection passes) and then among themselves by QR.
    """
    cols = np.array(partial_columns, dtype=complex)
    if cols.ndim == 1:
        cols = cols[:, None]
    d, k = cols.shape
    if k > d:
        raise ShapeError(f"{k} columns cannot fit in dimension {d}")
    if orthonormality_error(cols) > 1e-8:
        raise PreconditionError("input columns are not orthonormal within 1e-8")
    rng = np.random.default_rng(seed)
    if k == d:
        return UnitaryOp(_n_qubits_for(d), cols, check=False)
    extra = rng.standard_normal((d, d - k)) + 1j * rng.standard_normal((d, d - k))
    for _ in range(2):
        extra -= cols @ (cols.conj().T @ extra)
    q, _ = np.linalg.qr(extra)
    return UnitaryOp(_n_qubits_for(d), np.hstack([cols, q]), check=False)


def random_unitary(dim: int, seed: int | np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary: QR of a complex Gaussian with phase fix."""
    rng = np.random.default_rng(seed)
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diag(r) / np.abs(np.diag(r))
    return q * ph


def random_state(dim: int, seed: int | np.random.Generator) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def op_distance(u, v) -> float:
    """Spectral norm of ``u - v`` (accepts UnitaryOp or raw matrices)."""
    a = u.matrix if isinstance(u, UnitaryOp) else np.asarray(u)
    b = v.matrix if isinstance(v, UnitaryOp) else np.asarray(v)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b, 2))


def unitarity_error(mat: np.ndarray) -> float:
    mat = np.asarray(mat)
    return float(np.linalg.norm(mat.conj().T @ mat - np.eye(mat.shape[0]), 2))


def phase_insensitive_distance(a: np.ndarray, b: np.ndarray) -> float:
    """min over global phase g of ||a - e^{ig} b||."""
    a = np.asarray(a)
    b = np.asarray(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(np.sqrt(max(na**2 + nb**2 - 2 * abs(np.vdot(a, b)), 0.0)))
