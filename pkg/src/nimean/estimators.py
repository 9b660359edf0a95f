"""Mean estimators over non-identical oracle families.

``estimate_bounded`` turns each oracle into a fixed-point preparer of a
two-amplitude state whose good-weight depends only on the mean, then runs
amplitude estimation with a different preparer in every Grover slot.  The
sub-Gaussian estimators reduce to it by truncation and by a classical shift.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    BudgetExceeded,
    ContractViolation,
    InsufficientOracles,
    PreconditionError,
    RangeError,
    ValidationError,
)
from .primitives import (
    amplitude_estimation,
    check_range,
    consecutive_schedule,
    fixed_point_length,
)
from .rvoracle import FiniteRandomVariable, OracleFamily

log = logging.getLogger(__name__)

LAMBDA_FLOOR = 1 / math.sqrt(2)
N_CLASSICAL = math.ceil(8 * math.log(20))
MOM_GROUPS = math.ceil(8 * math.log(3))


@dataclass
class EstimateResult:
    mu_tilde: float
    p_tilde: float | None
    q_tilde: float | None
    total_experiments: int
    per_oracle_usage: list
    params: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------ helpers

def qtilde(p_tilde: float) -> float:
    """Invert p(q) = q^2 / (2q^2 - 2q + 1) on [0, 1].

    (p - sqrt(p(1-p))) / (2p - 1) is evaluated in the equivalent form
    sqrt(p) / (sqrt(p) + sqrt(1-p)), which has no cancellation near p = 1/2.
    """
    if not -1e-12 <= p_tilde <= 1 + 1e-12:
        raise RangeError(f"p_tilde {p_tilde} outside [0, 1]")
    p = min(max(p_tilde, 0.0), 1.0)
    if abs(2 * p - 1) < 1e-9:
        return 0.5
    a, b = math.sqrt(p), math.sqrt(1 - p)
    return a / (a + b)


def p_of_q(q: float) -> float:
    return q * q / (2 * q * q - 2 * q + 1)


def next_power_of_two(x: float) -> int:
    return max(2, 1 << max(0, math.ceil(math.log2(x))))


@dataclass(frozen=True)
class BoundedPlan:
    """Circuit sizes the bounded estimator will use for (eps, L, H)."""

    eps: float
    L: float
    H: float
    eps_prime: float
    M: int
    fp_length: int

    @property
    def min_m(self) -> int:
        return 4 * self.fp_length

    @property
    def min_T(self) -> int:
        return self.M

    @property
    def experiments(self) -> int:
        # one uncontrolled preparation plus M-1 controlled reflections (S and S^dag)
        return 2 * self.fp_length * (2 * self.M - 1)


def plan_bounded(eps: float, L: float, H: float, eps_prime_const: float = 100.0) -> BoundedPlan:
    if not eps > 0:
        raise ValidationError("eps must be positive")
    if not H > L:
        raise ValidationError("need H > L")
    width = H - L
    eps_prime = eps**2 / (eps_prime_const * width**2)
    if not eps_prime < 1:
        raise ValidationError("eps too large for the interval; eps' must be below 1")
    M = next_power_of_two(8 * width / eps)
    return BoundedPlan(eps, L, H, eps_prime, M, fixed_point_length(eps_prime, LAMBDA_FLOOR))


def _run_bounded(family: OracleFamily, plan: BoundedPlan, rng, start: int = 0) -> EstimateResult:
    L, H = plan.L, plan.H
    if family.T - start < plan.M:
        raise InsufficientOracles(
            f"need {plan.M} oracles from index {start}, family has {family.T - start}")
    if family.m < plan.min_m:
        raise BudgetExceeded(f"m={family.m} below one controlled reflection ({plan.min_m})")
    if family.ledger.remaining(start) < 2 * plan.fp_length:
        raise BudgetExceeded(f"oracle {start} cannot afford the initial preparation")
    for i in range(start, start + plan.M):
        check_range(family.value_table(i), family.index_probs(i), L, H)

    before = family.ledger.total
    schedule = consecutive_schedule(family, plan.M, L, H, plan.eps_prime, start)
    est = amplitude_estimation(schedule, plan.M, rng)
    used = family.ledger.total - before
    if used != plan.experiments:
        raise ContractViolation(f"ledger charged {used}, circuit needs {plan.experiments}")

    q = qtilde(est.p_tilde)
    mu = q * (H - L) + L
    warnings = []
    lam = min(slot.lambda_measured for slot in schedule.slots[: plan.M])
    if lam < LAMBDA_FLOOR - 1e-12:
        warnings.append(f"fixed-point overlap {lam:.6f} below {LAMBDA_FLOOR:.6f}")
    slack = (mu - L) * (H - mu) / (4 * (H - L))
    if plan.eps > slack:
        warnings.append(f"eps={plan.eps} exceeds (mu-L)(H-mu)/(4(H-L))={slack:.4g} at the estimate")
    for w in warnings:
        log.warning(w)
    params = {
        "eps": plan.eps, "L": L, "H": H, "delta": family.delta, "m": family.m, "T": family.T,
        "eps_prime": plan.eps_prime, "eps_dd": plan.eps / (H - L), "M": plan.M,
        "fixed_point_length": plan.fp_length, "y": est.y, "start_oracle": start,
    }
    return EstimateResult(mu, est.p_tilde, q, family.ledger.total,
                          family.ledger.per_oracle().tolist(), params, warnings)


def estimate_bounded(family: OracleFamily, eps: float, L: float, H: float,
                     rng=None, eps_prime_const: float = 100.0) -> EstimateResult:
    """Mean of a family supported in [L, H] to additive ``eps`` (w.p. >= 2/3)."""
    if not family.delta < eps / 2:
        raise PreconditionError(f"delta={family.delta} must be below eps/2={eps / 2}")
    plan = plan_bounded(eps, L, H, eps_prime_const)
    return _run_bounded(family, plan, np.random.default_rng(rng))


# ----------------------------------------------------------- sub-Gaussian

def delta_threshold(K: float, R: float, eps: float) -> float:
    """Truncation radius K * max(sqrt(4 ln(128K/eps)), sqrt(2 ln(32R/eps)))."""
    if not (K > 0 and R > 0 and eps > 0):
        raise ValidationError("K, R and eps must be positive")
    a, b = 128 * K / eps, 32 * R / eps
    if a <= 1 or b <= 1:
        raise ValidationError(f"eps={eps} too large: log arguments {a:.4g}, {b:.4g} must exceed 1")
    return K * max(math.sqrt(4 * math.log(a)), math.sqrt(2 * math.log(b)))


@dataclass(frozen=True)
class SubGaussianSpec:
    K: float
    R: float
    eps: float
    Delta: float
    N_classical: int = N_CLASSICAL

    @classmethod
    def make(cls, K: float, R: float, eps: float) -> "SubGaussianSpec":
        return cls(K, R, eps, delta_threshold(K, R, eps))

    @property
    def bounds(self) -> tuple[float, float]:
        return -self.R - self.Delta, self.R + self.Delta


def truncation_map(L: float, H: float):
    """Value-table map sending values outside [L, H] to 0."""
    if not L <= 0 <= H:
        raise ValidationError(f"truncation target 0 lies outside [{L}, {H}]")

    def trunc(values):
        values = np.asarray(values, dtype=float)
        return np.where((values >= L) & (values <= H), values, 0.0)
    return trunc


def truncation_bias(rv: FiniteRandomVariable, L: float, H: float) -> float:
    """|E[X] - E[X~]| with X~ = X on [L, H] and 0 elsewhere."""
    return abs(float(np.dot(rv.probs, rv.support - truncation_map(L, H)(rv.support))))


def truncation_bias_bound(K: float, R: float, Delta: float) -> float:
    """4 (2 Delta + R) exp(-Delta^2 / 2K^2), the last explicit step before eps/4."""
    return 4 * (2 * Delta + R) * math.exp(-Delta**2 / (2 * K**2))


def _run_meanbounded(family: OracleFamily, eps: float, K: float, R: float, rng,
                     start: int, eps_prime_const: float) -> EstimateResult:
    spec = SubGaussianSpec.make(K, R, eps)
    L, H = spec.bounds
    truncated = family.derive(truncation_map(L, H))
    plan = plan_bounded(eps, L, H, eps_prime_const)
    res = _run_bounded(truncated, plan, rng, start)
    res.params.update({"K": K, "R": R, "Delta": spec.Delta})
    return res


def estimate_subgaussian_meanbounded(family: OracleFamily, eps: float, K: float, R: float,
                                     rng=None, eps_prime_const: float = 100.0) -> EstimateResult:
    """Sub-Gaussian family with |mu_i| <= R <= K: truncate to [-R-Delta, R+Delta] and estimate."""
    if not 0 < R <= K:
        raise PreconditionError(f"need 0 < R <= K, got R={R}, K={K}")
    if not family.delta < eps / 4:
        raise PreconditionError(f"delta={family.delta} must be below eps/4={eps / 4}")
    return _run_meanbounded(family, eps, K, R, np.random.default_rng(rng), 0, eps_prime_const)


def classical_sample(family: OracleFamily, i: int, rng) -> float:
    """One measured draw of oracle i's value register (one experiment).

    Measuring O|0> in the index basis gives index j with probability p(j), so the
    draw is taken from that distribution directly.
    """
    family.ledger.charge(i, "fwd")
    rng = np.random.default_rng(rng)
    probs = family.index_probs(i)
    j = rng.choice(len(probs), p=probs / probs.sum())
    return float(family.value_table(i)[j])


def draw_classical(family: OracleFamily, n: int, rng, start: int = 0) -> tuple[np.ndarray, int]:
    """``n`` samples spending each oracle's whole budget before moving on.

    Returns the samples and the first oracle index left untouched.
    """
    out = np.empty(n)
    i = start
    for k in range(n):
        while i < family.T and family.ledger.remaining(i) == 0:
            i += 1
        if i >= family.T:
            raise BudgetExceeded(f"family exhausted after {k} of {n} classical samples")
        out[k] = classical_sample(family, i, rng)
    return out, i + 1 if n else start


def estimate_subgaussian(family: OracleFamily, eps: float, K: float, rng=None,
                         eps_prime_const: float = 100.0) -> EstimateResult:
    """General sub-Gaussian family: classical pre-estimate, shift, then the mean-bounded routine."""
    if not family.delta < eps / 4:
        raise PreconditionError(f"delta={family.delta} must be below eps/4={eps / 4}")
    rng = np.random.default_rng(rng)
    samples, start = draw_classical(family, N_CLASSICAL, rng)
    mu_hat = float(samples.mean())
    shifted = family.derive(lambda v: np.asarray(v, dtype=float) - mu_hat)
    res = _run_meanbounded(shifted, eps, K, K, rng, start, eps_prime_const)
    res.mu_tilde += mu_hat
    res.params.update({"mu_hat": mu_hat, "N_classical": N_CLASSICAL})
    return res


def plan_subgaussian(eps: float, K: float, eps_prime_const: float = 100.0) -> BoundedPlan:
    L, H = SubGaussianSpec.make(K, K, eps).bounds
    return plan_bounded(eps, L, H, eps_prime_const)


# ------------------------------------------------------------- classical

def median_of_means(samples, n_groups: int) -> float:
    """Median of contiguous group means; the remainder joins the last group."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValidationError("median_of_means needs at least one sample")
    if not 1 <= n_groups <= x.size:
        raise ValidationError(f"n_groups must be in [1, {x.size}], got {n_groups}")
    size = x.size // n_groups
    cuts = [size * k for k in range(1, n_groups)]
    return float(np.median([g.mean() for g in np.split(x, cuts)]))


def mom_sample_size(eps: float, sigma: float) -> tuple[int, int]:
    """(groups, group size): Chebyshev per group at failure 1/4, Hoeffding across groups."""
    if not eps > 0 or sigma < 0:
        raise ValidationError("need eps > 0 and sigma >= 0")
    return MOM_GROUPS, max(1, math.ceil(4 * sigma**2 / eps**2))


def estimate_mom(family: OracleFamily, eps: float, sigma: float, rng=None) -> EstimateResult:
    """Classical median-of-means baseline using one experiment per sample."""
    rng = np.random.default_rng(rng)
    g, b = mom_sample_size(eps, sigma)
    before = family.ledger.total
    samples, _ = draw_classical(family, g * b, rng)
    mu = median_of_means(samples, g)
    used = family.ledger.total - before
    return EstimateResult(mu, None, None, family.ledger.total, family.ledger.per_oracle().tolist(),
                          {"eps": eps, "sigma": sigma, "groups": g, "group_size": b,
                           "samples": used, "m": family.m, "T": family.T, "delta": family.delta})
