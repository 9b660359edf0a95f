"""Experiment configuration, seeded trial orchestration and scaling fits.

Per-trial seeds are ``SeedSequence([master_seed, trial]).generate_state(1)[0]``.
That integer seeds both the oracle family and the estimator's generator, so a
trial can be replayed on its own from the CSV.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import ValidationError
from .estimators import (
    N_CLASSICAL,
    estimate_bounded,
    estimate_mom,
    estimate_subgaussian,
    mom_sample_size,
    plan_bounded,
    plan_subgaussian,
)
from .rvoracle import DISTRIBUTIONS, FamilySpec

SCHEMA_VERSION = 1
ESTIMATORS = ("bounded", "subgaussian", "mom")
CSV_COLUMNS = ["eps", "trial", "seed", "total_experiments", "mu_tilde", "success"]


def _fail(path: str, msg: str):
    raise ValidationError(f"{path}: {msg}")


def _positive(x, path, integer=False):
    kind = int if integer else (int, float)
    if isinstance(x, bool) or not isinstance(x, kind) or not x > 0:
        _fail(path, f"expected a positive {'integer' if integer else 'number'}, got {x!r}")


@dataclass
class ExperimentConfig:
    estimator: str
    family: dict
    eps: list
    trials: int = 1
    master_seed: int = 0
    L: float = 0.0
    H: float = 1.0
    K: float | None = None
    sigma: float | None = None
    T: int | str = "auto"
    m: int | str = "auto"
    eps_prime_const: float = 100.0
    workers: int = 1
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if isinstance(self.eps, (int, float)):
            self.eps = [self.eps]
        self.eps = list(self.eps)
        self.validate()

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            _fail("config.schema_version", f"unsupported version {self.schema_version!r}")
        if self.estimator not in ESTIMATORS:
            _fail("config.estimator", f"must be one of {ESTIMATORS}, got {self.estimator!r}")
        if not isinstance(self.family, dict):
            _fail("config.family", "expected an object")
        allowed = {"distribution", "params", "delta", "n_garbage"}
        for key in self.family:
            if key not in allowed:
                _fail(f"config.family.{key}", "unknown field")
        if self.family.get("distribution") not in DISTRIBUTIONS:
            _fail("config.family.distribution", f"must be one of {DISTRIBUTIONS}")
        if not isinstance(self.family.get("params", {}), dict):
            _fail("config.family.params", "expected an object")
        if self.family.get("delta", 0.0) < 0:
            _fail("config.family.delta", "must be non-negative")
        if not self.eps:
            _fail("config.eps", "needs at least one value")
        for k, e in enumerate(self.eps):
            _positive(e, f"config.eps[{k}]")
        if isinstance(self.trials, bool) or not isinstance(self.trials, int) or self.trials < 0:
            _fail("config.trials", f"expected a non-negative integer, got {self.trials!r}")
        if isinstance(self.master_seed, bool) or not isinstance(self.master_seed, int) \
                or self.master_seed < 0:
            _fail("config.master_seed", "expected a non-negative integer")
        for name in ("T", "m"):
            v = getattr(self, name)
            if v != "auto":
                _positive(v, f"config.{name}", integer=True)
        _positive(self.workers, "config.workers", integer=True)
        _positive(self.eps_prime_const, "config.eps_prime_const")
        if self.estimator == "bounded" and not self.L < self.H:
            _fail("config.H", "need L < H")
        if self.estimator == "subgaussian":
            _positive(self.K, "config.K")
        if self.sigma is not None:
            _positive(self.sigma, "config.sigma")
        try:
            rv = self.family_spec(1, 1, 0).base_rv()
        except (KeyError, TypeError) as exc:
            _fail("config.family.params", f"missing or malformed parameter ({exc})")
        except ValidationError as exc:
            _fail("config.family.params", str(exc))
        if self.estimator == "bounded" and (rv.support.min() < self.L or rv.support.max() > self.H):
            _fail("config.family", f"support leaves [L, H] = [{self.L}, {self.H}]")

    # -- serialization

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            _fail("config", "expected a JSON object")
        if "schema_version" not in d:
            _fail("config.schema_version", "missing")
        for key in d:
            if key not in cls.__dataclass_fields__:
                _fail(f"config.{key}", "unknown field")
        for key in ("estimator", "family", "eps"):
            if key not in d:
                _fail(f"config.{key}", "missing")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config: not valid JSON ({exc})") from exc
        return cls.from_dict(d)

    # -- derived quantities

    def family_spec(self, T: int, m: int, seed: int) -> FamilySpec:
        f = self.family
        return FamilySpec(f["distribution"], dict(f.get("params", {})), T, m,
                          float(f.get("delta", 0.0)), int(f.get("n_garbage", 1)), seed)

    def sigma_for_mom(self) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        return math.sqrt(self.family_spec(1, 1, 0).base_rv().variance)

    def budget(self, eps: float) -> tuple[int, int]:
        """(T, m) for one eps; "auto" picks the smallest feasible value."""
        if self.estimator == "bounded":
            plan = plan_bounded(eps, self.L, self.H, self.eps_prime_const)
            m = plan.min_m if self.m == "auto" else self.m
            T = plan.min_T if self.T == "auto" else self.T
        elif self.estimator == "subgaussian":
            plan = plan_subgaussian(eps, self.K, self.eps_prime_const)
            m = plan.min_m if self.m == "auto" else self.m
            T = plan.min_T + math.ceil(N_CLASSICAL / m) if self.T == "auto" else self.T
        else:
            g, b = mom_sample_size(eps, self.sigma_for_mom())
            m = 1 if self.m == "auto" else self.m
            T = math.ceil(g * b / m) if self.T == "auto" else self.T
        return int(T), int(m)


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_json(fh.read())


def trial_seed(master_seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([master_seed, trial]).generate_state(1)[0])


# ------------------------------------------------------------ trials

def run_single(config: ExperimentConfig, eps: float, seed: int):
    """One estimator call on a fresh family; returns (EstimateResult, mu_true)."""
    T, m = config.budget(eps)
    family = config.family_spec(T, m, seed).build()
    rng = np.random.default_rng([seed, 1])
    if config.estimator == "bounded":
        res = estimate_bounded(family, eps, config.L, config.H, rng, config.eps_prime_const)
    elif config.estimator == "subgaussian":
        res = estimate_subgaussian(family, eps, config.K, rng, config.eps_prime_const)
    else:
        res = estimate_mom(family, eps, config.sigma_for_mom(), rng)
    if res.total_experiments != family.ledger.total:
        raise ValidationError("reported experiment count disagrees with the ledger")
    return res, family.target_mean


def result_record(config: ExperimentConfig, eps: float, seed: int) -> dict:
    res, mu = run_single(config, eps, seed)
    return {"config": config.to_dict(), "eps": eps, "seed": seed, "mu_true": mu,
            "mu_tilde": res.mu_tilde, "p_tilde": res.p_tilde,
            "total_experiments": res.total_experiments,
            "per_oracle_usage": res.per_oracle_usage,
            "success": bool(abs(res.mu_tilde - mu) <= eps),
            "params": res.params, "warnings": res.warnings}


def _trial_row(args) -> dict:
    config, eps, trial, seed = args
    res, mu = run_single(config, eps, seed)
    return {"eps": eps, "trial": trial, "seed": seed,
            "total_experiments": int(res.total_experiments), "mu_tilde": float(res.mu_tilde),
            "success": bool(abs(res.mu_tilde - mu) <= eps)}


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float


@dataclass
class SweepResult:
    config: ExperimentConfig
    rows: list = field(default_factory=list)

    def success_rate(self, eps: float) -> float:
        hits = [r["success"] for r in self.rows if r["eps"] == eps]
        return float(np.mean(hits)) if hits else float("nan")

    def median_counts(self) -> dict:
        out = {}
        for e in self.config.eps:
            counts = [r["total_experiments"] for r in self.rows if r["eps"] == e]
            if counts:
                out[e] = float(np.median(counts))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({**r, "mu_tilde": repr(r["mu_tilde"]), "eps": repr(r["eps"])})
        return buf.getvalue()

    def to_dict(self) -> dict:
        d = {"config": self.config.to_dict(), "rows": self.rows,
             "success_rate": {repr(e): self.success_rate(e) for e in self.config.eps},
             "median_experiments": {repr(e): c for e, c in self.median_counts().items()}}
        if len(self.median_counts()) >= 3:
            d["slope"] = asdict(fit_slope(self))
        return d

    def write(self, out_dir: str) -> tuple[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        jpath, cpath = os.path.join(out_dir, "sweep.json"), os.path.join(out_dir, "sweep.csv")
        with open(jpath, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
        with open(cpath, "w") as fh:
            fh.write(self.to_csv())
        return jpath, cpath


def run_trials(config: ExperimentConfig, out_dir: str | None = None) -> SweepResult:
    """Every (eps, trial) pair, merged in (eps, trial) order regardless of worker count."""
    jobs = [(config, e, t, trial_seed(config.master_seed, t))
            for e in config.eps for t in range(config.trials)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            rows = list(pool.map(_trial_row, jobs))
    else:
        rows = [_trial_row(j) for j in jobs]
    result = SweepResult(config, rows)
    if out_dir is not None:
        result.write(out_dir)
    return result


def fit_slope(sweep) -> SlopeFit:
    """Least-squares slope of log(median experiments) against log(1/eps).

    Accepts a SweepResult or a mapping eps -> count (or list of counts).
    """
    if isinstance(sweep, SweepResult):
        med = sweep.median_counts()
    else:
        med = {e: float(np.median(c)) for e, c in dict(sweep).items()}
    if len(med) < 3:
        raise ValidationError(f"slope fit needs at least 3 eps points, got {len(med)}")
    eps = np.array(list(med), dtype=float)
    counts = np.array(list(med.values()), dtype=float)
    if np.any(eps <= 0) or np.any(counts <= 0):
        raise ValidationError("eps and counts must be positive")
    fit = stats.linregress(np.log(1 / eps), np.log(counts))
    half = stats.t.ppf(0.975, len(eps) - 2) * fit.stderr
    return SlopeFit(float(fit.slope), float(fit.intercept), float(fit.stderr),
                    float(fit.slope - half), float(fit.slope + half))
