"""Lower-bound lab: effective states, low-depth simulation, adversarial oracles.

A T-query algorithm acts on a query register Q (leading wires) and a work
register W.  It applies U_0, then alternates (O^{(t)})^{a_t} on Q with U_t.
Only O|0> = psi_X is fixed; everything an adversary may choose lives off that
column.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import null_space

from .errors import (
    ConstructionError,
    PreconditionError,
    RegisterOverflow,
    ShapeError,
    ValidationError,
)
from .primitives import fixed_point_length, fixed_point_state
from .rvoracle import Oracle, make_rv
from .statevec import (
    Projector,
    StateVector,
    UnitaryOp,
    apply_matrix,
    complete_to_unitary,
    random_state,
    random_unitary,
    unitarity_error,
)

MAX_LAB_QUBITS = 14
SCHMIDT_CUTOFF = 1e-12


@dataclass(frozen=True)
class QueryAlgorithm:
    n_Q: int
    n_W: int
    unitaries: tuple  # U_0 .. U_T as dense matrices on Q x W
    directions: tuple  # a_1 .. a_T in {+1, -1}

    def __post_init__(self):
        d = 1 << (self.n_Q + self.n_W)
        if len(self.unitaries) != len(self.directions) + 1:
            raise ShapeError("need exactly one more unitary than queries")
        for u in self.unitaries:
            if np.shape(u) != (d, d):
                raise ShapeError(f"interleaved unitary has shape {np.shape(u)}, expected {(d, d)}")
            if unitarity_error(u) > 1e-9:
                raise PreconditionError("interleaved operation is not unitary")
        if any(a not in (1, -1) for a in self.directions):
            raise ValidationError("directions must be +1 or -1")

    @property
    def T(self) -> int:
        return len(self.directions)

    @property
    def dQ(self) -> int:
        return 1 << self.n_Q

    @property
    def dW(self) -> int:
        return 1 << self.n_W


def random_query_algorithm(n_Q: int, n_W: int, T: int, seed: int,
                           directions: Sequence[int] | None = None) -> QueryAlgorithm:
    """Haar-random interleaved unitaries; random directions unless given."""
    rng = np.random.default_rng(seed)
    d = 1 << (n_Q + n_W)
    us = tuple(random_unitary(d, rng) for _ in range(T + 1))
    if directions is None:
        directions = tuple(int(a) for a in rng.choice([1, -1], size=T))
    return QueryAlgorithm(n_Q, n_W, us, tuple(directions))


@dataclass(frozen=True)
class CanonicalAction:
    """The one column every admissible oracle shares: O|0> = psi_X."""

    psi_X: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.psi_X, dtype=complex).reshape(-1)
        if abs(np.linalg.norm(v) - 1) > 1e-10:
            raise PreconditionError("psi_X must be a unit vector")
        object.__setattr__(self, "psi_X", v)

    @property
    def zero(self) -> np.ndarray:
        z = np.zeros_like(self.psi_X)
        z[0] = 1
        return z

    def phi_beg(self, a: int) -> np.ndarray:
        return self.zero if a == 1 else self.psi_X

    def phi_end(self, a: int) -> np.ndarray:
        return self.psi_X if a == 1 else self.zero


def _zero(d: int) -> np.ndarray:
    v = np.zeros(d, dtype=complex)
    v[0] = 1
    return v


def _on_Q(op: np.ndarray, state: np.ndarray, dW: int) -> np.ndarray:
    """Apply a Q-register operator to a (Q x W) vector."""
    return (op @ state.reshape(-1, dW)).reshape(-1)


def effective_state(alg: QueryAlgorithm, canon: CanonicalAction, t: int) -> StateVector:
    """(|end_t><beg_t| x I) U_{t-1} ... (|end_1><beg_1| x I) U_0 |0>|0>."""
    if not 0 <= t <= alg.T:
        raise ValidationError(f"t must lie in [0, {alg.T}]")
    v = _zero(alg.dQ * alg.dW)
    for s in range(1, t + 1):
        a = alg.directions[s - 1]
        v = alg.unitaries[s - 1] @ v
        proj = np.outer(canon.phi_end(a), canon.phi_beg(a).conj())
        v = _on_Q(proj, v, alg.dW)
    return StateVector(alg.n_Q + alg.n_W, v, normalized=False)


def schmidt_coefficients(state: np.ndarray, dA: int) -> np.ndarray:
    """Singular values of the state reshaped across the A | rest cut."""
    return np.linalg.svd(np.asarray(state).reshape(dA, -1), compute_uv=False)


def run_algorithm(alg: QueryAlgorithm, oracles: Sequence[np.ndarray]) -> list[np.ndarray]:
    """States psi^(0..T) with psi^(0) = U_0|0> and psi^(t) = U_t O_t^{a_t} psi^(t-1)."""
    states = [alg.unitaries[0] @ _zero(alg.dQ * alg.dW)]
    for t in range(1, alg.T + 1):
        o = oracles[t - 1]
        o = o if alg.directions[t - 1] == 1 else o.conj().T
        states.append(alg.unitaries[t] @ _on_Q(o, states[-1], alg.dW))
    return states


# ------------------------------------------------------------ low depth

@dataclass
class GateOp:
    label: str
    matrix: np.ndarray = field(repr=False)
    wires: tuple
    round: int | None = None  # query round for oracle calls


@dataclass
class LowDepthReport:
    ops: list
    n_qubits: int
    residual: float
    queries: int
    query_rounds: int
    postselected: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"n_qubits": self.n_qubits, "residual": self.residual, "queries": self.queries,
                "query_rounds": self.query_rounds,
                "ops": [(op.label, list(op.wires), op.round) for op in self.ops]}


def build_low_depth(alg: QueryAlgorithm, oracle, canon: CanonicalAction | None = None
                    ) -> LowDepthReport:
    """V_T^low on W, Q_0 .. Q_T, checked against the effective state.

    Round 1 applies O to every Q_i with a_i = +1; the U_i chain runs on (Q_i, W);
    round 2 applies O^dag to Q_{i-1} for every a_i = -1, which turns the
    post-selection on <psi_X| into one on <0|.
    """
    o = oracle.matrix if isinstance(oracle, UnitaryOp) else np.asarray(oracle)
    if canon is None:
        canon = CanonicalAction(o[:, 0])
    elif np.linalg.norm(o[:, 0] - canon.psi_X) > 1e-10:
        raise PreconditionError("oracle does not map |0> to psi_X")
    T, nQ, nW = alg.T, alg.n_Q, alg.n_W
    n = nW + (T + 1) * nQ
    if n > MAX_LAB_QUBITS:
        raise RegisterOverflow(f"low-depth circuit needs {n} qubits (limit {MAX_LAB_QUBITS})")

    def q(i):
        return tuple(range(nW + i * nQ, nW + (i + 1) * nQ))
    w = tuple(range(nW))

    ops = []
    for i in range(1, T + 1):
        if alg.directions[i - 1] == 1:
            ops.append(GateOp("O", o, q(i), 1))
    for i in range(T):
        ops.append(GateOp(f"U{i}", alg.unitaries[i], q(i) + w))
    for i in range(1, T + 1):
        if alg.directions[i - 1] == -1:
            ops.append(GateOp("Odag", o.conj().T, q(i - 1), 2))

    amps = _zero(1 << n)
    for op in ops:
        amps = apply_matrix(op.matrix, amps, n, op.wires)
    # keep Q_0 .. Q_{T-1} = 0, then reorder (W, Q_T) -> (Q_T, W)
    t = amps.reshape(1 << nW, 1 << (T * nQ), 1 << nQ)[:, 0, :]
    post = t.T.reshape(-1)
    target = effective_state(alg, canon, T).amplitudes
    rounds = {op.round for op in ops if op.round is not None}
    return LowDepthReport(ops, n, float(np.linalg.norm(post - target)),
                          sum(op.round is not None for op in ops), len(rounds), post)


# ------------------------------------------------------ adversarial oracles

@dataclass
class AdversaryReport:
    oracles: list = field(repr=False)
    lhs: float
    rhs: float
    orth_residuals: list
    kill_residual: float
    max_unitarity_error: float
    max_pin_error: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "residual": self.residual,
                "orth_residuals": self.orth_residuals, "kill_residual": self.kill_residual,
                "max_unitarity_error": self.max_unitarity_error,
                "max_pin_error": self.max_pin_error}


def _steer(phi_beg, phi_end, basis_in, forbidden_slices, dQ) -> np.ndarray:
    """Unitary W with W phi_beg = phi_end and W i_Q = i'_Q, each i'_Q avoiding its slice."""
    images = []
    for k, slice_k in enumerate(forbidden_slices):
        cons = np.column_stack([phi_end, *images, *slice_k])
        free = null_space(cons.conj().T, rcond=1e-10)
        if free.shape[1] == 0:
            raise ConstructionError(
                f"no admissible image for Schmidt term {k}: {cons.shape[1]} constraints "
                f"in dimension {dQ}")
        images.append(free[:, 0])
    ins = np.column_stack([phi_beg, basis_in])
    outs = np.column_stack([phi_end, *images])
    u_in = complete_to_unitary(ins, 0).matrix
    u_out = complete_to_unitary(outs, 1).matrix
    return u_out @ u_in.conj().T


def adversarial_oracles(alg: QueryAlgorithm, canon: CanonicalAction,
                        pi_c: Projector) -> AdversaryReport:
    """Choose every oracle's free action so non-effective amplitude misses Im(pi_c)."""
    dQ, dW = alg.dQ, alg.dW
    if not dQ > 2 * dW:
        raise PreconditionError(f"need dim Q > 2 dim W, got {dQ} vs {dW}")
    if not dQ >= 2 * pi_c.rank:
        raise PreconditionError(f"need dim Q >= 2 rank(pi_c), got {dQ} vs {pi_c.rank}")
    if pi_c.dim != dQ * dW:
        raise ShapeError("pi_c must act on Q x W")

    T = alg.T
    psi = alg.unitaries[0] @ _zero(dQ * dW)
    oracles, orth = [], []
    kill = 0.0
    for t in range(T):
        a = alg.directions[t]
        beg, end = canon.phi_beg(a), canon.phi_end(a)
        # psi^(t) = |beg> x phi_w + perp, phi_w read off the next effective state
        phi_w = end.conj() @ effective_state(alg, canon, t + 1).amplitudes.reshape(dQ, dW)
        perp = psi - np.kron(beg, phi_w)
        orth.append(float(np.linalg.norm(beg.conj() @ perp.reshape(dQ, dW))))

        if t + 1 < T:
            nxt = canon.phi_beg(alg.directions[t + 1])
            forb = alg.unitaries[t + 1].conj().T @ np.kron(nxt[:, None], np.eye(dW))
        else:
            forb = alg.unitaries[T].conj().T @ pi_c.basis
        u, svals, vh = np.linalg.svd(perp.reshape(dQ, dW), full_matrices=False)
        r = int(np.sum(svals > SCHMIDT_CUTOFF))
        basis_in = u[:, :r]
        slices = []
        for k in range(r):
            kw = vh[k]
            f = forb.reshape(dQ, dW, -1)
            slices.append(list(np.einsum("qwj,w->jq", f, kw.conj())))
        w_op = _steer(beg, end, basis_in, slices, dQ)
        o = w_op if a == 1 else w_op.conj().T
        oracles.append(o)
        moved = _on_Q(w_op, perp, dW)
        if t + 1 == T:
            kill = float(np.linalg.norm(pi_c.basis.conj().T @ (alg.unitaries[T] @ moved)))
        psi = alg.unitaries[t + 1] @ _on_Q(w_op, psi, dW)

    final = psi
    eff = alg.unitaries[T] @ effective_state(alg, canon, T).amplitudes
    lhs = float(np.linalg.norm(pi_c.basis.conj().T @ final) ** 2)
    rhs = float(np.linalg.norm(pi_c.basis.conj().T @ eff) ** 2)
    unit = max((unitarity_error(o) for o in oracles), default=0.0)
    pin = max((float(np.linalg.norm(o[:, 0] - canon.psi_X)) for o in oracles), default=0.0)
    return AdversaryReport(oracles, lhs, rhs, orth, kill, unit, pin)


def random_projector(dim: int, rank: int, seed) -> Projector:
    if not 0 <= rank <= dim:
        raise ValidationError("rank out of range")
    return Projector(random_unitary(dim, seed)[:, :rank])


def adversary_sweep(n_instances: int, seed: int, n_Q: int = 4, n_W: int = 1,
                    max_T: int = 3, max_rank: int = 2) -> list[dict]:
    """Seeded random (algorithm, psi_X, pi_c) instances and their residuals."""
    rows = []
    for idx in range(n_instances):
        ss = np.random.SeedSequence([seed, idx])
        rng = np.random.default_rng(ss)
        T = int(rng.integers(1, max_T + 1))
        rank = int(rng.integers(1, max_rank + 1))
        alg = random_query_algorithm(n_Q, n_W, T, rng)
        canon = CanonicalAction(random_state(1 << n_Q, rng))
        pi_c = random_projector(1 << (n_Q + n_W), rank, rng)
        rep = adversarial_oracles(alg, canon, pi_c)
        rows.append({"instance": idx, "T": T, "rank": rank, "n_Q": n_Q, "n_W": n_W,
                     "directions": list(alg.directions), **rep.to_dict()})
    return rows


def lowdepth_sweep(n_instances: int, seed: int, n_Q: int = 2, n_W: int = 1,
                   max_T: int = 3) -> list[dict]:
    rows = []
    for idx in range(n_instances):
        rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))
        T = int(rng.integers(0, max_T + 1))
        alg = random_query_algorithm(n_Q, n_W, T, rng)
        oracle = random_unitary(1 << n_Q, rng)
        rep = build_low_depth(alg, oracle)
        rows.append({"instance": idx, "T": T, "directions": list(alg.directions),
                     **rep.to_dict()})
    return rows


# ------------------------------------------------------ register recovery

@dataclass
class RecoveryReport:
    probs: np.ndarray = field(repr=False)
    i_star: int
    contract_ok: bool
    raw_weight: float
    recovered_weight: float
    overlap: float
    distance: float
    fixed_point_length: int
    n_qubits: int
    recovered: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"i_star": self.i_star, "contract_ok": self.contract_ok,
                "raw_weight": self.raw_weight, "recovered_weight": self.recovered_weight,
                "overlap": self.overlap, "distance": self.distance,
                "fixed_point_length": self.fixed_point_length, "n_qubits": self.n_qubits}


def make_estimator_unitary(probs, n_sys: int, n_out: int, seed) -> UnitaryOp:
    """U|0> = sum_i sqrt(p(i)) |phi_i>_{sys} |i>_{out} with seeded random phi_i."""
    probs = np.asarray(probs, dtype=float)
    if len(probs) > 1 << n_out:
        raise ValidationError("more grid outcomes than the output register holds")
    rng = np.random.default_rng(seed)
    ds, do = 1 << n_sys, 1 << n_out
    col = np.zeros((ds, do), dtype=complex)
    for i, p in enumerate(probs):
        col[:, i] = np.sqrt(p) * random_state(ds, rng)
    col = col.reshape(-1)
    return complete_to_unitary(col / np.linalg.norm(col), rng)


def recover_query_register(estimator: UnitaryOp, n_out: int, grid_eps: float, mu: float,
                           fp_eps: float = 0.01,
                           lambda_min: float = math.sqrt(2 / 9)) -> RecoveryReport:
    """Copy the output grid value, uncompute, and fixed-point onto |0>_{rest} sum p(i)|i>.

    The output register (last ``n_out`` wires) holds grid index i for value
    i * grid_eps.  The two points flanking ``mu`` are i* and i*+1.
    """
    n_rest = estimator.n_qubits
    n = n_rest + n_out
    if n > MAX_LAB_QUBITS:
        raise RegisterOverflow(f"recovery circuit needs {n} qubits (limit {MAX_LAB_QUBITS})")
    do = 1 << n_out
    u0 = estimator.matrix[:, 0].reshape(-1, do)
    probs = np.sum(np.abs(u0) ** 2, axis=0)
    i_star = int(math.floor(mu / grid_eps + 1e-12))
    flank = [i for i in (i_star, i_star + 1) if 0 <= i < do]
    contract_ok = float(probs[flank].sum()) >= 2 / 3 - 1e-12

    # V|0> = (U^dag x I)(copy out -> W2)(U x I)|0>
    after_u = np.zeros((u0.shape[0], do, do), dtype=complex)
    after_u[:, np.arange(do), np.arange(do)] = u0  # W2 now equals the output register
    a0 = (estimator.matrix.conj().T @ after_u.reshape(-1, do)).reshape(-1)
    mask = np.zeros(1 << n, dtype=bool)
    mask[:do] = True  # rest register all zero, W2 free
    L = fixed_point_length(fp_eps, lambda_min)
    recovered = fixed_point_state(a0, mask, L, fp_eps)

    target = probs / np.linalg.norm(probs)
    overlap = float(abs(np.vdot(np.pad(target, (0, (1 << n) - do)), recovered)))
    w2 = np.abs(recovered[:do]) ** 2
    return RecoveryReport(probs, i_star, contract_ok, float(np.sum(probs[flank] ** 2)),
                          float(w2[flank].sum()), overlap,
                          float(math.sqrt(max(2 - 2 * overlap, 0.0))), L, n, recovered)


# ----------------------------------------------------------- bit oracles

def _pad_bits(x) -> np.ndarray:
    bits = np.array([int(b) for b in x], dtype=int)
    if bits.size == 0 or np.any((bits != 0) & (bits != 1)):
        raise ValidationError("x must be a non-empty 0/1 string")
    size = 1 << max(0, math.ceil(math.log2(bits.size)))
    return np.pad(bits, (0, size - bits.size))


def bit_oracle(x) -> UnitaryOp:
    """O_x|i>|b> = |i>|b xor x_i>, index wires first; x is zero-padded to a power of two."""
    bits = _pad_bits(x)
    n = bits.size
    mat = np.zeros((2 * n, 2 * n), dtype=complex)
    for i, xi in enumerate(bits):
        for b in (0, 1):
            mat[2 * i + (b ^ xi), 2 * i + b] = 1
    return UnitaryOp.from_matrix(mat, check=False)


def bernoulli_from_bits(x) -> Oracle:
    """Hadamards on the index, then one O_x call: Bernoulli(|x|/n) with the index as garbage."""
    bits = np.array([int(b) for b in x], dtype=int)
    n = bits.size
    if n < 1 or n & (n - 1):
        raise ValidationError("bit string length must be a power of two")
    k = n.bit_length() - 1
    had = np.ones((1, 1))
    for _ in range(k):
        had = np.kron(had, np.array([[1, 1], [1, -1]]) / math.sqrt(2))
    u = bit_oracle(bits).matrix @ np.kron(had, np.eye(2))
    p = bits.sum() / n
    rv = make_rv([0.0, 1.0], [1 - p, p])
    return Oracle(rv, 1, k, UnitaryOp.from_matrix(u, check=False), np.array([0.0, 1.0]),
                  np.array(rv.probs))


# -------------------------------------------------------- counting progress

@dataclass
class ProgressTrace:
    n: int
    k: int
    m: int
    T: int
    S_values: list  # per block: complex S^(0..m)
    chosen_i0: list
    block_progress: list  # per block: per-candidate |overlap change|
    overlaps: list  # |<psi_k | psi_{k+1}>| after each block
    guaranteed: bool

    @property
    def bound_values(self) -> list:
        return [4 * (l + 1) for l in range(self.m)]

    def step_changes(self) -> list:
        return [np.abs(np.diff(s)).tolist() for s in self.S_values]

    def block_totals(self) -> list:
        return [float(abs(s[0] - s[-1])) for s in self.S_values]

    def selected_progress(self) -> list:
        return [float(bp[self.candidates.index(i)]) for bp, i in
                zip(self.block_progress, self.chosen_i0)]

    @property
    def candidates(self) -> list:
        return list(range(self.k, self.n))

    @property
    def final_overlap(self) -> float:
        return self.overlaps[-1] if self.overlaps else 1.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["block", "l", "S_l", "bound", "chosen_i0"])
        for b, (s, i0) in enumerate(zip(self.S_values, self.chosen_i0)):
            for l, val in enumerate(s):
                w.writerow([b, l, repr(complex(val)), 2 * l * (l + 1), i0])
        return buf.getvalue()


def grover_counting_algorithm(n: int, n_queries: int, n_W: int = 0) -> QueryAlgorithm:
    """Grover iterations over the index with the target prepared in |->."""
    k = n.bit_length() - 1
    if n < 2 or n & (n - 1):
        raise ValidationError("n must be a power of two")
    h = np.ones((1, 1))
    for _ in range(k):
        h = np.kron(h, np.array([[1, 1], [1, -1]]) / math.sqrt(2))
    minus = np.array([[1, 1], [1, -1]]) / math.sqrt(2) @ np.array([[0, 1], [1, 0]])
    eye_w = np.eye(1 << n_W)
    u0 = np.kron(np.kron(h, minus), eye_w)
    plus = np.full(n, 1 / math.sqrt(n))
    diffusion = 2 * np.outer(plus, plus) - np.eye(n)
    ut = np.kron(np.kron(diffusion, np.eye(2)), eye_w)
    return QueryAlgorithm(k + 1, n_W, (u0,) + (ut,) * n_queries, (1,) * n_queries)


def counting_blocks(n: int, k: int, m: int) -> int:
    return max(1, (n - k) // (4 * (m + 1) ** 2))


def hard_counting_sequence(n: int, k: int, m: int, alg: QueryAlgorithm,
                           T: int | None = None) -> ProgressTrace:
    """Chain blocks of m queries, each time fixing the weight-(k+1) string that moved least.

    s = 1^k 0^(n-k).  Every candidate s^(i), i in F_s, is simulated exactly.
    """
    if m < 1 or not 1 <= k < n:
        raise PreconditionError("need m >= 1 and 1 <= k < n")
    if n & (n - 1):
        raise PreconditionError("n must be a power of two")
    if m * m > n:
        raise PreconditionError(f"m={m} outside the m <= sqrt(n) regime for n={n}")
    n_idx = n.bit_length() - 1
    if alg.n_Q != n_idx + 1:
        raise PreconditionError(f"query register must hold {n_idx} index qubits plus one target")
    if alg.n_Q + alg.n_W > MAX_LAB_QUBITS:
        raise RegisterOverflow("algorithm register too large")
    T = counting_blocks(n, k, m) if T is None else T
    if alg.T < m * T:
        raise PreconditionError(f"algorithm makes {alg.T} queries, construction needs {m * T}")

    s = np.array([1] * k + [0] * (n - k))
    cands = list(range(k, n))
    o_s = bit_oracle(s).matrix
    o_c = {}
    for i in cands:
        si = s.copy()
        si[i] = 1
        o_c[i] = bit_oracle(si).matrix
    dW = alg.dW

    def step(state, o, t):
        return alg.unitaries[t] @ _on_Q(o, state, dW)

    psi_k = alg.unitaries[0] @ _zero(alg.dQ * dW)
    psi_k1 = psi_k.copy()
    S_all, chosen, progress, overlaps = [], [], [], []
    for b in range(T):
        t0 = b * m
        branches = {i: psi_k1.copy() for i in cands}
        cur_k = psi_k
        S = [sum(np.vdot(cur_k, branches[i]) for i in cands)]
        start = {i: np.vdot(cur_k, branches[i]) for i in cands}
        for l in range(m):
            cur_k = step(cur_k, o_s, t0 + l + 1)
            for i in cands:
                branches[i] = step(branches[i], o_c[i], t0 + l + 1)
            S.append(sum(np.vdot(cur_k, branches[i]) for i in cands))
        moves = [float(abs(start[i] - np.vdot(cur_k, branches[i]))) for i in cands]
        i0 = cands[int(np.argmin(moves))]
        psi_k, psi_k1 = cur_k, branches[i0]
        S_all.append(np.array(S))
        chosen.append(i0)
        progress.append(moves)
        overlaps.append(float(abs(np.vdot(psi_k, psi_k1))))
    return ProgressTrace(n, k, m, T, S_all, chosen, progress, overlaps,
                         guaranteed=(n - k) >= 4 * (m + 1) ** 2)
