"""Quantum subroutines for mean estimation.

Register layout for the encoder and its uncompute pair:
oracle wires (garbage, index), then the flag qubit, then the copy ancilla.

Every reflection used here is "identity minus a rank-1 or diagonal term", so the
amplitude-estimation engine only ever needs the prepared vectors S|0>, never the
dense circuits.  Charging still follows the circuit: each use of a fixed-point
preparer bills the ledger for all of its oracle calls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractViolation, RangeError, ScheduleError, ShapeError, ValidationError
from .rvoracle import Oracle, OracleFamily
from .statevec import Projector, UnitaryOp, apply_matrix, phase_insensitive_distance


# ------------------------------------------------------------ encoding

def check_range(values, probs, L: float, H: float) -> None:
    """RangeError unless every branch with positive probability lies in [L, H]."""
    if not H > L:
        raise RangeError(f"need H > L, got L={L}, H={H}")
    values = np.asarray(values)
    bad = (np.asarray(probs) > 0) & ((values < L) | (values > H))
    if np.any(bad):
        raise RangeError(f"support values {values[bad].tolist()} fall outside [{L}, {H}]")


def _rotation_amplitudes(oracle: Oracle, L: float, H: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-index (flag-0, flag-1) amplitudes of the controlled rotation."""
    vals = oracle.value_table
    live = oracle.index_probs > 0
    check_range(vals, oracle.index_probs, L, H)
    frac = np.where(live, np.clip((vals - L) / (H - L), 0.0, 1.0), 0.0)
    return np.sqrt(1.0 - frac), np.sqrt(frac)


def encode_rotation(oracle: Oracle, L: float, H: float) -> UnitaryOp:
    """U = (I_garbage x R)(O x I_flag), R rotating the flag by sqrt((x-L)/(H-L))."""
    c, s = _rotation_amplitudes(oracle, L, H)
    di = 1 << oracle.n_index
    r = np.zeros((2 * di, 2 * di), dtype=complex)
    for j in range(di):
        r[2 * j: 2 * j + 2, 2 * j: 2 * j + 2] = [[c[j], -s[j]], [s[j], c[j]]]
    big_r = np.kron(np.eye(1 << oracle.n_garbage), r)
    big_o = np.kron(oracle.unitary.matrix, np.eye(2))
    return UnitaryOp(oracle.n_qubits + 1, big_r @ big_o, check=False)


def uncompute_pair(u: UnitaryOp) -> UnitaryOp:
    """V = (U^dag x I)(I x CNOT_{flag->anc})(U x I); the flag is u's last wire."""
    n = u.n_qubits
    big_u = np.kron(u.matrix, np.eye(2))
    cnot = np.kron(np.eye(1 << (n - 1)), np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex))
    return UnitaryOp(n + 1, big_u.conj().T @ cnot @ big_u, check=False)


def uncompute_state(oracle: Oracle, L: float, H: float) -> np.ndarray:
    """V|0...0> computed with vector operations only."""
    c, s = _rotation_amplitudes(oracle, L, H)
    dg, di = 1 << oracle.n_garbage, 1 << oracle.n_index
    psi = oracle.unitary.matrix[:, 0].reshape(dg, di)
    # after U and the copy: flag and ancilla agree
    w = np.zeros((dg, di, 2, 2), dtype=complex)
    w[:, :, 0, 0] = psi * c
    w[:, :, 1, 1] = psi * s
    # R^dag on (index, flag)
    f0, f1 = w[:, :, 0, :].copy(), w[:, :, 1, :].copy()
    w[:, :, 0, :] = c[None, :, None] * f0 + s[None, :, None] * f1
    w[:, :, 1, :] = -s[None, :, None] * f0 + c[None, :, None] * f1
    # O^dag on (garbage, index)
    w = oracle.unitary.matrix.conj().T @ w.reshape(dg * di, 4)
    return w.reshape(-1)


# ------------------------------------------------------- fixed point

def fixed_point_length(eps: float, lambda_min: float) -> int:
    """Smallest odd L whose Chebyshev sequence reaches distance eps from overlap lambda_min."""
    if not 0 < eps < 1:
        raise ValidationError("eps must lie in (0, 1)")
    if lambda_min <= 0:
        raise ValidationError("lambda_min must be positive")
    w = lambda_min**2
    if w >= 1:
        return 1
    delta = eps / 2
    L = math.ceil(math.acosh(1 / delta) / math.acosh(1 / math.sqrt(1 - w)))
    return L if L % 2 else L + 1


def fixed_point_phases(L: int, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Phase pairs (alpha_j, beta_j), j = 1..(L-1)/2, with beta_{l-j+1} = -alpha_j."""
    if L < 1 or L % 2 == 0:
        raise ValidationError("L must be a positive odd integer")
    l = (L - 1) // 2
    delta = eps / 2
    gamma = 1 / math.cosh(math.acosh(1 / delta) / L)
    j = np.arange(1, l + 1)
    alphas = 2 * np.arctan2(1.0, np.tan(2 * np.pi * j / L) * math.sqrt(1 - gamma**2))
    return alphas, -alphas[::-1]


def _selective(x: np.ndarray, theta: float, target: np.ndarray) -> np.ndarray:
    """(I - (1 - e^{i theta}) |t><t|) x for a vector or matrix x."""
    overlap = target.conj() @ x
    return x - (1 - np.exp(1j * theta)) * np.multiply.outer(target, overlap)


def fixed_point_search(a: UnitaryOp, pi: Projector, eps: float, lambda_min: float) -> UnitaryOp:
    """Dense S_L = G_l ... G_1 A with G_j = -S_s(alpha_j) S_t(beta_j).

    S_s(alpha) = A (I - (1 - e^{-i alpha})|0><0|) A^dag and
    S_t(beta) = I - (1 - e^{i beta}) Pi.
    """
    if pi.rank == 0:
        raise ContractViolation("target projector has an empty image")
    if pi.dim != a.dim:
        raise ShapeError("projector and unitary dimensions differ")
    L = fixed_point_length(eps, lambda_min)
    alphas, betas = fixed_point_phases(L, eps)
    A = a.matrix
    s = A[:, 0]
    P = pi.matrix
    out = A.copy()
    eye = np.eye(a.dim)
    for al, be in zip(alphas, betas):
        out = (eye - (1 - np.exp(1j * be)) * P) @ out
        out = _selective(out, -al, s)
        out = -out
    return UnitaryOp(a.n_qubits, out, check=False)


def fixed_point_state(a0: np.ndarray, target_mask: np.ndarray, L: int,
                      eps: float) -> np.ndarray:
    """S_L|0> from the vector A|0> alone (Pi diagonal, given as a boolean mask)."""
    alphas, betas = fixed_point_phases(L, eps)
    v = np.array(a0, dtype=complex)
    for al, be in zip(alphas, betas):
        v[target_mask] *= np.exp(1j * be)
        v = -_selective(v, -al, a0)
    return v


@dataclass(frozen=True)
class FixedPointReport:
    lambda_measured: float
    lambda_min: float
    distance: float
    eps: float
    L: int

    @property
    def ok(self) -> bool:
        return self.lambda_measured >= self.lambda_min - 1e-12 and self.distance <= self.eps


def verify_fixed_point(a: UnitaryOp, pi: Projector, s_l: UnitaryOp, eps: float,
                       lambda_min: float) -> FixedPointReport:
    """Measure the overlap floor and the phase-insensitive distance to the target."""
    a0 = a.matrix[:, 0]
    proj = pi.basis @ (pi.basis.conj().T @ a0)
    lam = float(np.linalg.norm(proj))
    if lam == 0:
        raise ContractViolation("target component of A|0> vanishes")
    dist = phase_insensitive_distance(proj / lam, s_l.matrix[:, 0])
    return FixedPointReport(lam, lambda_min, dist, eps, fixed_point_length(eps, lambda_min))


def cpinot(pi: Projector) -> UnitaryOp:
    """X (x) Pi + I (x) (I - Pi), control ancilla on the leading wire."""
    P = pi.matrix
    d = pi.dim
    x = np.array([[0, 1], [1, 0]])
    mat = np.kron(x, P) + np.kron(np.eye(2), np.eye(d) - P)
    return UnitaryOp.from_matrix(mat, check=False)


def grover_reflection(s: UnitaryOp) -> UnitaryOp:
    """I - 2 s|0><0|s^dag."""
    v = s.matrix[:, 0]
    return UnitaryOp(s.n_qubits, np.eye(s.dim) - 2 * np.outer(v, v.conj()), check=False)


# ------------------------------------------------------------ schedule

class PrepSlot:
    """One state preparer S available to amplitude estimation.

    ``prepare`` bills one uncontrolled use of S; ``reflect`` bills the controlled
    S and S^dag inside one controlled reflection.  Both return the vector S|0>.
    """

    dim: int

    def vector(self) -> np.ndarray:
        raise NotImplementedError

    def prepare(self) -> np.ndarray:
        return self.vector()

    def reflect(self) -> np.ndarray:
        return self.vector()


@dataclass
class UnitarySlot(PrepSlot):
    """Oracle-free preparer given as a dense unitary."""

    u: UnitaryOp

    @property
    def dim(self) -> int:
        return self.u.dim

    def vector(self) -> np.ndarray:
        return np.array(self.u.matrix[:, 0])


@dataclass
class FixedPointSlot(PrepSlot):
    """S_i = Fix(V_i, |0>|0><0|<0| x I, eps') for oracle ``index`` of ``family``."""

    family: OracleFamily
    index: int
    L_bound: float
    H_bound: float
    eps: float
    lambda_min: float = 1 / math.sqrt(2)
    _vec: np.ndarray | None = field(default=None, repr=False)
    lambda_measured: float = field(default=float("nan"))

    @property
    def length(self) -> int:
        return fixed_point_length(self.eps, self.lambda_min)

    @property
    def dim(self) -> int:
        return 4 << (self.family.n_index + self.family.n_garbage)

    @property
    def use_cost(self) -> int:
        """Experiments per use of S: L copies of V, two oracle calls each."""
        return 2 * self.length

    def vector(self) -> np.ndarray:
        if self._vec is None:
            a0 = uncompute_state(self.family.oracle(self.index), self.L_bound, self.H_bound)
            mask = np.zeros(a0.shape[0], dtype=bool)
            mask[:2] = True
            self.lambda_measured = float(np.linalg.norm(a0[mask]))
            self._vec = fixed_point_state(a0, mask, self.length, self.eps)
        return self._vec

    def prepare(self) -> np.ndarray:
        L = self.length
        self.family.ledger.charge_many([(self.index, "fwd", L), (self.index, "adj", L)])
        return self.vector()

    def reflect(self) -> np.ndarray:
        L = self.length
        self.family.ledger.charge_many([(self.index, "cfwd", 2 * L),
                                        (self.index, "cadj", 2 * L)])
        return self.vector()


@dataclass
class StatePrepSchedule:
    """Preparers in the order amplitude estimation consumes them.

    Slot 0 prepares the initial state; slot j >= 1 supplies the j-th Grover
    application.  ``good`` flags the basis states of the marked subspace.
    """

    slots: Sequence[PrepSlot]
    good: np.ndarray

    @classmethod
    def from_wire(cls, slots, n_qubits: int, good_wire: int, value: int = 1):
        idx = np.arange(1 << n_qubits)
        good = ((idx >> (n_qubits - 1 - good_wire)) & 1) == value
        return cls(list(slots), good)

    @classmethod
    def identical(cls, u: UnitaryOp, M: int, good_wire: int | None = None):
        """M copies of one dense preparer; the good wire defaults to the last."""
        wire = u.n_qubits - 1 if good_wire is None else good_wire
        return cls.from_wire([UnitarySlot(u)] * M, u.n_qubits, wire)

    def __len__(self) -> int:
        return len(self.slots)


def consecutive_schedule(family: OracleFamily, M: int, L_bound: float, H_bound: float,
                         eps: float, start: int = 0) -> StatePrepSchedule:
    """Assign oracle start+j to slot j."""
    slots = [FixedPointSlot(family, start + j, L_bound, H_bound, eps)
             for j in range(min(M, family.T - start))]
    n = family.n_index + family.n_garbage + 2
    return StatePrepSchedule.from_wire(slots, n, n - 1)


@dataclass(frozen=True)
class AmplitudeEstimate:
    p_tilde: float
    M: int
    y: int
    outcome_probs: np.ndarray = field(repr=False, compare=False, default=None)


def ae_error_bound(p: float, M: int) -> float:
    return 2 * math.pi * math.sqrt(p * (1 - p)) / M + math.pi**2 / M**2


def _check_power_of_two(M: int) -> int:
    n = int(M).bit_length() - 1
    if M < 2 or (1 << n) != M:
        raise ValidationError(f"M must be a power of two >= 2, got {M}")
    return n


def amplitude_estimation(schedule: StatePrepSchedule, M: int,
                         rng: np.random.Generator | int | None = None) -> AmplitudeEstimate:
    """Phase estimation over Q_j = -(I - 2|s_j><s_j|)(I - 2 Pi_good).

    Ancilla k controls 2^k Grover applications; applications draw slots in order.
    The ancilla register is held as the leading axis of an (M, dim) array.
    """
    n = _check_power_of_two(M)
    if len(schedule) < M:
        raise ScheduleError(f"schedule has {len(schedule)} slots, phase estimation needs {M}")
    rng = np.random.default_rng(rng)
    good = np.asarray(schedule.good, dtype=bool)
    s0 = schedule.slots[0].prepare()
    d = s0.shape[0]
    if good.shape[0] != d:
        raise ShapeError("good mask does not match the prepared state")
    state = np.tile(s0, (M, 1)) / math.sqrt(M)
    neg_flip = np.where(good, 1.0, -1.0)  # -(I - 2 Pi_good) as a diagonal
    slot = 1
    for k in range(n):
        view = state.reshape(M >> (k + 1), 2, 1 << k, d)
        for _ in range(1 << k):
            s = schedule.slots[slot].reflect()
            slot += 1
            sub = view[:, 1]
            sub *= neg_flip
            sub -= 2 * (sub @ s.conj())[..., None] * s
    amps = np.fft.fft(state, axis=0) / math.sqrt(M)
    probs = np.sum(np.abs(amps) ** 2, axis=1)
    probs /= probs.sum()
    y = int(rng.choice(M, p=probs))
    return AmplitudeEstimate(math.sin(math.pi * y / M) ** 2, M, y, probs)


def qpe_dense(u_prep: Sequence[UnitaryOp], good: np.ndarray, M: int) -> np.ndarray:
    """Reference phase estimation built from dense controlled gates (small sizes only).

    Returns the outcome distribution.  Ancilla wire n-1-k carries phase bit k.
    """
    n = _check_power_of_two(M)
    sys_n = u_prep[0].n_qubits
    total = n + sys_n
    amps = np.zeros(1 << total, dtype=complex)
    amps[0] = 1
    h = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
    for w in range(n):
        amps = apply_matrix(h, amps, total, [w])
    amps = apply_matrix(u_prep[0].matrix, amps, total, range(n, total))
    sys_dim = 1 << sys_n
    flip = np.diag(np.where(good, -1.0, 1.0))
    slot = 1
    for k in range(n):
        ctrl = n - 1 - k  # ancilla wire holding phase bit k
        for _ in range(1 << k):
            v = u_prep[slot].matrix[:, 0]
            slot += 1
            q = -(np.eye(sys_dim) - 2 * np.outer(v, v.conj())) @ flip
            cq = np.eye(2 * sys_dim, dtype=complex)
            cq[sys_dim:, sys_dim:] = q
            amps = apply_matrix(cq, amps, total, [ctrl] + list(range(n, total)))
    # with phase bit k on wire n-1-k the ancilla row index is y itself
    t = amps.reshape(1 << n, sys_dim)
    out = np.fft.fft(t, axis=0) / math.sqrt(M)
    return np.sum(np.abs(out) ** 2, axis=1)


__all__ = [
    "encode_rotation", "uncompute_pair", "uncompute_state", "fixed_point_length",
    "fixed_point_phases", "fixed_point_search", "fixed_point_state", "verify_fixed_point",
    "FixedPointReport", "cpinot", "grover_reflection", "PrepSlot", "UnitarySlot",
    "FixedPointSlot", "StatePrepSchedule", "consecutive_schedule", "AmplitudeEstimate",
    "amplitude_estimation", "ae_error_bound", "qpe_dense",
]
