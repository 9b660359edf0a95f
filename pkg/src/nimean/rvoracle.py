"""Random-variable oracles, non-identical families and the query ledger.

An oracle acts on ``n_garbage`` garbage wires followed by ``n_index`` index
wires.  Applied to |0...0> it yields sum_x sqrt(p(x)) |psi_x>|idx(x)>; the
real value of branch ``idx`` is read from a classical value table.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp
from scipy.stats import norm

from .errors import (
    BudgetExceeded,
    SizeError,
    TurnOrderViolation,
    ValidationError,
)
from .statevec import StateVector, UnitaryOp, apply, complete_to_unitary, controlled, adjoint

MODES = ("fwd", "adj", "cfwd", "cadj")
PROB_TOL = 1e-12


@dataclass(frozen=True)
class FiniteRandomVariable:
    support: np.ndarray
    probs: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.dot(self.probs, self.support))

    @property
    def variance(self) -> float:
        return float(np.dot(self.probs, (self.support - self.mean) ** 2))

    def __len__(self) -> int:
        return len(self.support)


def make_rv(support, probs) -> FiniteRandomVariable:
    """Validate and freeze a finite distribution."""
    support = np.array(support, dtype=float).reshape(-1)
    probs = np.array(probs, dtype=float).reshape(-1)
    if support.shape != probs.shape or support.size == 0:
        raise ValidationError("support and probs must be non-empty and equally long")
    if not np.all(np.isfinite(support)) or not np.all(np.isfinite(probs)):
        raise ValidationError("support and probs must be finite")
    if np.any(probs < 0):
        raise ValidationError("probabilities must be non-negative")
    if abs(probs.sum() - 1.0) > PROB_TOL:
        raise ValidationError(f"probabilities sum to {probs.sum()!r}, not 1")
    if len(np.unique(support)) != len(support):
        raise ValidationError("support values must be distinct")
    support.setflags(write=False)
    probs.setflags(write=False)
    return FiniteRandomVariable(support, probs)


def merge_values(values, probs) -> FiniteRandomVariable:
    """Distribution of a value table that may map several branches to one value."""
    uniq, inv = np.unique(np.asarray(values, dtype=float), return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inv, probs)
    return make_rv(uniq, merged / merged.sum())


def discretized_gaussian(mean: float, sigma: float, n_points: int = 65,
                         clip: float = 8.0) -> FiniteRandomVariable:
    """Gaussian binned onto a symmetric grid of ``n_points`` over mean +- clip*sigma.

    Each grid point receives the CDF mass of its cell; both tails are folded into
    the extreme points, so the grid mean equals ``mean`` by symmetry.
    """
    if n_points < 2 or sigma <= 0:
        raise ValidationError("need n_points >= 2 and sigma > 0")
    z = np.linspace(-clip, clip, n_points)
    edges = (z[:-1] + z[1:]) / 2
    cdf = norm.cdf(edges)
    p = np.diff(np.concatenate([[0.0], cdf, [1.0]]))
    p = (p + p[::-1]) / 2  # exact symmetry against rounding
    return make_rv(mean + sigma * z, p / p.sum())


def verify_subgaussian(rv: FiniteRandomVariable, K: float) -> bool:
    """Check P[|X-EX| >= t] <= 2 exp(-t^2 / 2K^2) for every t >= 0.

    The tail is a step function and the bound decreases in t, so it suffices to
    test t at each attained deviation.
    """
    dev = np.abs(rv.support - rv.mean)
    order = np.argsort(dev)[::-1]
    tails = np.cumsum(rv.probs[order])
    bound = 2 * np.exp(-dev[order] ** 2 / (2 * K**2))
    return bool(np.all(tails <= bound + 1e-15))


# ---------------------------------------------------------------- oracles

@dataclass(frozen=True)
class Oracle:
    """A state-preparation unitary for one random variable.

    ``index_probs`` and ``value_table`` are indexed by the support index; indices
    past the support are unused (zero probability, value 0).
    """

    rv: FiniteRandomVariable
    n_index: int
    n_garbage: int
    unitary: UnitaryOp
    value_table: np.ndarray
    index_probs: np.ndarray

    @property
    def n_qubits(self) -> int:
        return self.n_index + self.n_garbage

    @property
    def index_wires(self) -> list[int]:
        return list(range(self.n_garbage, self.n_qubits))

    def with_values(self, values) -> "Oracle":
        """Same unitary with a different classical value table (zero quantum cost)."""
        values = np.array(values, dtype=float)
        used = self.index_probs > 0
        return Oracle(merge_values(values[used], self.index_probs[used]), self.n_index,
                      self.n_garbage, self.unitary, values, self.index_probs)


def index_register_size(n_values: int) -> int:
    return max(1, math.ceil(math.log2(n_values)))


def build_oracle(rv: FiniteRandomVariable, n_garbage: int, seed,
                 n_index: int | None = None) -> Oracle:
    """Seeded oracle whose first column encodes ``rv`` with random garbage states."""
    need = index_register_size(len(rv))
    n_index = need if n_index is None else n_index
    if (1 << n_index) < len(rv):
        raise SizeError(f"{n_index} index qubits cannot hold {len(rv)} support points")
    if n_garbage < 0:
        raise SizeError("n_garbage must be non-negative")
    rng = np.random.default_rng(seed)
    dg, di = 1 << n_garbage, 1 << n_index
    k = len(rv)
    g = rng.standard_normal((dg, k)) + 1j * rng.standard_normal((dg, k))
    g *= np.exp(-1j * np.angle(g[0]))  # real leading amplitude per garbage state
    g /= np.linalg.norm(g, axis=0)
    first = np.zeros((dg, di), dtype=complex)
    first[:, :k] = g * np.sqrt(rv.probs)
    col = first.reshape(-1)
    col /= np.linalg.norm(col)
    unitary = complete_to_unitary(col, rng)
    values = np.zeros(di)
    values[: len(rv)] = rv.support
    probs = np.zeros(di)
    probs[: len(rv)] = rv.probs
    return Oracle(rv, n_index, n_garbage, unitary, values, probs)


def oracle_marginal(oracle: Oracle) -> np.ndarray:
    """Index-register distribution of O|0...0>."""
    col = oracle.unitary.matrix[:, 0].reshape(1 << oracle.n_garbage, 1 << oracle.n_index)
    return np.sum(np.abs(col) ** 2, axis=0)


# ------------------------------------------------------------------ ledger

class QueryLedger:
    """Counts oracle uses and enforces the per-oracle budget and turn order.

    Every charge is validated before anything is recorded, so a failed charge
    leaves the ledger untouched.
    """

    def __init__(self, T: int, m: int):
        if T < 0 or m < 0:
            raise ValidationError("T and m must be non-negative")
        self.T = T
        self.m = m
        self.counts = np.zeros((T, len(MODES)), dtype=np.int64)
        self.cursor = -1

    def used(self, i: int) -> int:
        return int(self.counts[i].sum())

    def remaining(self, i: int) -> int:
        return self.m - self.used(i)

    def charge(self, i: int, mode: str = "fwd", n: int = 1) -> None:
        if mode not in MODES:
            raise ValidationError(f"unknown mode {mode!r}")
        if not 0 <= i < self.T:
            raise ValidationError(f"oracle index {i} outside [0, {self.T})")
        if n < 1:
            raise ValidationError(f"charge count must be positive, got {n}")
        if i < self.cursor:
            raise TurnOrderViolation(f"oracle {i} requested after oracle {self.cursor}")
        if self.used(i) + n > self.m:
            raise BudgetExceeded(
                f"oracle {i}: {self.used(i)} used, {n} more requested, budget {self.m}"
            )
        self.counts[i, MODES.index(mode)] += n
        self.cursor = i

    def charge_many(self, charges) -> None:
        """Apply several ``(i, mode, n)`` charges as one all-or-nothing step."""
        charges = list(charges)
        saved = self.counts.copy(), self.cursor
        try:
            for i, mode, n in charges:
                self.charge(i, mode, n)
        except Exception:
            self.counts, self.cursor = saved
            raise

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def per_oracle(self) -> np.ndarray:
        return self.counts.sum(axis=1)


# ------------------------------------------------------------------ family

def _tilt_to_mean(rv: FiniteRandomVariable, target: float) -> np.ndarray:
    """Probabilities p(x) e^{theta x} / Z with the requested mean."""
    live = rv.probs > 0
    x = rv.support
    lo, hi = x[live].min(), x[live].max()
    if abs(target - rv.mean) <= 1e-15:
        return np.array(rv.probs)
    if not lo < target < hi:
        raise ValidationError(f"mean {target} unreachable on support [{lo}, {hi}]")
    if live.sum() == 2:
        a, b = x[live]
        w = (target - a) / (b - a)
        out = np.zeros_like(rv.probs)
        out[np.flatnonzero(live)] = [1 - w, w]
        return out
    logp = np.where(live, np.log(np.where(live, rv.probs, 1.0)), -np.inf)
    scale = max(hi - lo, 1e-300)

    def tilted(theta):
        w = logp + theta * x / scale
        return np.exp(w - logsumexp(w))

    def gap(theta):
        return float(np.dot(tilted(theta), x)) - target

    a, b = -1.0, 1.0
    while gap(a) > 0:
        a *= 2
    while gap(b) < 0:
        b *= 2
    theta = brentq(gap, a, b, xtol=1e-12, rtol=1e-15, maxiter=500)
    return tilted(theta)


@dataclass
class OracleFamily:
    """T non-identical oracles sharing one register shape and one ledger.

    Oracles are synthesized lazily.  ``derive`` returns a view with a transformed
    value table that shares unitaries and the ledger with its parent.
    """

    rvs: list
    m: int
    delta: float
    target_mean: float
    n_garbage: int
    seed: int
    n_index: int
    ledger: QueryLedger
    value_map: Callable | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def T(self) -> int:
        return len(self.rvs)

    def oracle(self, i: int) -> Oracle:
        if not 0 <= i < self.T:
            raise ValidationError(f"oracle index {i} outside [0, {self.T})")
        if i not in self._cache:
            ss = np.random.SeedSequence([self.seed, i])
            self._cache[i] = build_oracle(self.rvs[i], self.n_garbage, ss, self.n_index)
        base = self._cache[i]
        if self.value_map is None:
            return base
        return base.with_values(self.value_map(base.value_table))

    def value_table(self, i: int) -> np.ndarray:
        """Classical value table of oracle ``i`` without synthesizing its unitary."""
        values = np.zeros(1 << self.n_index)
        values[: len(self.rvs[i])] = self.rvs[i].support
        return values if self.value_map is None else np.asarray(self.value_map(values), float)

    def index_probs(self, i: int) -> np.ndarray:
        probs = np.zeros(1 << self.n_index)
        probs[: len(self.rvs[i])] = self.rvs[i].probs
        return probs

    def means(self) -> np.ndarray:
        if self.value_map is None:
            return np.array([rv.mean for rv in self.rvs])
        return np.array([self.value_table(i) @ self.index_probs(i) for i in range(self.T)])

    def use(self, i: int, mode: str = "fwd", n: int = 1) -> Oracle:
        """Charge ``n`` uses of oracle ``i`` and hand back the oracle."""
        self.ledger.charge(i, mode, n)
        return self.oracle(i)

    def derive(self, value_map: Callable) -> "OracleFamily":
        if self.value_map is None:
            composed = value_map
        else:
            inner = self.value_map
            composed = lambda v: value_map(inner(v))  # noqa: E731
        return OracleFamily(self.rvs, self.m, self.delta, self.target_mean, self.n_garbage,
                            self.seed, self.n_index, self.ledger, composed, self._cache)


def make_family(base: FiniteRandomVariable, T: int, delta: float, m: int, seed: int,
                n_garbage: int = 1) -> OracleFamily:
    """Jitter the mean of ``base`` by U[-delta, delta] independently per oracle."""
    if delta < 0:
        raise ValidationError("delta must be non-negative")
    if T < 1:
        raise ValidationError("T must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2**31]))
    mu = base.mean
    rvs = []
    for _ in range(T):
        target = mu + rng.uniform(-delta, delta) if delta > 0 else mu
        probs = _tilt_to_mean(base, target)
        probs = np.clip(probs, 0, None)
        rv = make_rv(base.support, probs / probs.sum())
        if abs(rv.mean - mu) > delta + 1e-12:
            raise ValidationError(f"jittered mean {rv.mean} drifted past delta")
        rvs.append(rv)
    return OracleFamily(rvs, m, delta, mu, n_garbage, seed,
                        index_register_size(len(base)), QueryLedger(T, m))


def query(family: OracleFamily, i: int, mode: str, s: StateVector,
          wires: Sequence[int]) -> StateVector:
    """Apply O_i, O_i^dag or a singly-controlled version (control on ``wires[0]``)."""
    oracle = family.use(i, mode)
    u = oracle.unitary
    if mode in ("adj", "cadj"):
        u = adjoint(u)
    if mode in ("cfwd", "cadj"):
        u = controlled(u, 1)
    return apply(u, s, wires)


def ledger_report(family: OracleFamily) -> dict:
    per = family.ledger.per_oracle()
    return {
        "per_oracle": per.tolist(),
        "by_mode": {mode: int(family.ledger.counts[:, k].sum()) for k, mode in enumerate(MODES)},
        "total": int(per.sum()),
    }


# ------------------------------------------------------------ family spec

DISTRIBUTIONS = ("bernoulli", "discrete", "point", "gaussian")


@dataclass(frozen=True)
class FamilySpec:
    """Serializable recipe for an OracleFamily."""

    distribution: str
    params: dict
    T: int
    m: int
    delta: float = 0.0
    n_garbage: int = 1
    seed: int = 0

    def base_rv(self) -> FiniteRandomVariable:
        p = self.params
        if self.distribution == "bernoulli":
            return make_rv([0.0, 1.0], [1 - p["p"], p["p"]])
        if self.distribution == "discrete":
            return make_rv(p["support"], p["probs"])
        if self.distribution == "point":
            return make_rv([p["value"]], [1.0])
        if self.distribution == "gaussian":
            return discretized_gaussian(p["mean"], p["sigma"], p.get("n_points", 65),
                                        p.get("clip", 8.0))
        raise ValidationError(f"unknown distribution {self.distribution!r}; "
                              f"expected one of {DISTRIBUTIONS}")

    def build(self) -> OracleFamily:
        return make_family(self.base_rv(), self.T, self.delta, self.m, self.seed,
                           self.n_garbage)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FamilySpec":
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_dict(cls, d: dict) -> "FamilySpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown family fields: {sorted(unknown)}")
        if d.get("distribution") not in DISTRIBUTIONS:
            raise ValidationError(f"family.distribution must be one of {DISTRIBUTIONS}")
        return cls(**d)
