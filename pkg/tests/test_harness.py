import csv
import io
import json
import os

import numpy as np
import pytest

from nimean.cli import main
from nimean.errors import ValidationError
from nimean.harness import (
    CSV_COLUMNS,
    ExperimentConfig,
    fit_slope,
    run_single,
    run_trials,
    trial_seed,
)

BERN = {"distribution": "bernoulli", "params": {"p": 0.5}, "delta": 0.01}


def _cfg(**kw):
    base = {"schema_version": 1, "estimator": "bounded", "family": BERN, "eps": [0.2],
            "trials": 2, "master_seed": 5}
    return {**base, **kw}


def test_config_roundtrip_is_exact():
    cfg = ExperimentConfig.from_dict(_cfg(eps=[0.2, 0.1], T=300, m="auto"))
    again = ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg and again.to_json() == cfg.to_json()


@pytest.mark.parametrize("patch,path", [
    ({"colour": 1}, "config.colour"),
    ({"eps": [0.2, -1]}, "config.eps[1]"),
    ({"estimator": "magic"}, "config.estimator"),
    ({"family": {**BERN, "extra": 1}}, "config.family.extra"),
    ({"family": {"distribution": "bernoulli", "params": {}}}, "config.family.params"),
    ({"trials": -1}, "config.trials"),
    ({"m": 0}, "config.m"),
    ({"schema_version": 2}, "config.schema_version"),
    ({"family": {"distribution": "point", "params": {"value": 3.0}}}, "config.family"),
])
def test_config_errors_carry_paths(patch, path):
    with pytest.raises(ValidationError) as info:
        ExperimentConfig.from_dict(_cfg(**patch))
    assert str(info.value).startswith(path + ":")


def test_missing_schema_version():
    d = _cfg()
    del d["schema_version"]
    with pytest.raises(ValidationError, match="schema_version"):
        ExperimentConfig.from_dict(d)


def test_trial_seeds_stable_and_distinct():
    seeds = [trial_seed(5, t) for t in range(50)]
    assert seeds == [trial_seed(5, t) for t in range(50)]
    assert len(set(seeds)) == 50
    assert trial_seed(5, 0) == int(np.random.SeedSequence([5, 0]).generate_state(1)[0])


def test_zero_trials_writes_valid_files(tmp_path):
    sweep = run_trials(ExperimentConfig.from_dict(_cfg(trials=0)), str(tmp_path))
    assert sweep.rows == []
    assert (tmp_path / "sweep.csv").read_text().strip() == ",".join(CSV_COLUMNS)
    assert json.loads((tmp_path / "sweep.json").read_text())["rows"] == []


def test_rerun_is_byte_identical(tmp_path):
    cfg = ExperimentConfig.from_dict(_cfg(trials=3))
    run_trials(cfg, str(tmp_path / "a"))
    run_trials(cfg, str(tmp_path / "b"))
    a = (tmp_path / "a" / "sweep.csv").read_bytes()
    assert a == (tmp_path / "b" / "sweep.csv").read_bytes()
    other = run_trials(ExperimentConfig.from_dict(_cfg(trials=3, master_seed=6)))
    assert other.to_csv().encode() != a


def test_parallel_workers_match_serial():
    serial = run_trials(ExperimentConfig.from_dict(_cfg(trials=3)))
    parallel = run_trials(ExperimentConfig.from_dict(_cfg(trials=3, workers=2)))
    assert serial.to_csv() == parallel.to_csv()


def test_csv_counts_match_ledger():
    cfg = ExperimentConfig.from_dict(_cfg(trials=3))
    sweep = run_trials(cfg)
    for row in sweep.rows:
        res, _ = run_single(cfg, row["eps"], row["seed"])
        assert row["total_experiments"] == res.total_experiments
    rows = list(csv.DictReader(io.StringIO(sweep.to_csv())))
    assert len(rows) == 3 and list(rows[0]) == CSV_COLUMNS


@pytest.mark.slow
def test_bernoulli_sweep_success():
    cfg = ExperimentConfig.from_dict(_cfg(eps=[0.2, 0.1, 0.05], trials=12, master_seed=1))
    sweep = run_trials(cfg)
    assert len(sweep.rows) == 36
    for e in cfg.eps:
        assert sweep.success_rate(e) >= 2 / 3


def test_fit_slope_exact_power_laws():
    eps = [0.4, 0.2, 0.1, 0.05]
    one = fit_slope({e: 7.0 / e for e in eps})
    assert one.slope == pytest.approx(1.0, abs=1e-9)
    two = fit_slope({e: [3.0 / e**2, 3.0 / e**2, 1e9] for e in eps})
    assert two.slope == pytest.approx(2.0, abs=1e-9)  # medians ignore the outlier
    with pytest.raises(ValidationError):
        fit_slope({0.1: 10, 0.2: 5})


# ------------------------------------------------------------------ CLI

def _write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def test_cli_usage_errors(tmp_path, capsys):
    assert main(["sweep", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["frobnicate"]) == 2
    assert main([]) == 2
    assert main(["estimate-bounded"]) == 2
    mom = _write(tmp_path, "mom.json", _cfg(estimator="mom"))
    assert main(["estimate-bounded", "--config", mom]) == 2


def test_cli_validation_error(tmp_path, capsys):
    bad = _write(tmp_path, "bad.json", _cfg(colour="red"))
    assert main(["sweep", "--config", bad]) == 1
    assert "config.colour" in capsys.readouterr().err


def test_cli_estimate_bounded_echoes_config(tmp_path, capsys):
    path = _write(tmp_path, "bern.json", _cfg())
    assert main(["estimate-bounded", "--config", path, "--seed", "7",
                 "--out", str(tmp_path / "o")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["config"]["master_seed"] == 7 and out["seed"] == 7
    assert set(out) >= {"config", "seed", "mu_tilde", "p_tilde", "total_experiments",
                        "per_oracle_usage", "success"}
    assert out["total_experiments"] == sum(out["per_oracle_usage"])
    assert json.loads((tmp_path / "o" / "result.json").read_text())["mu_tilde"] == out["mu_tilde"]


def test_cli_sweep_csv(tmp_path, capsys):
    path = _write(tmp_path, "bern.json", _cfg())
    assert main(["sweep", "--config", path, "--trials", "2", "--format", "csv",
                 "--out", str(tmp_path / "s")]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 2
    assert os.path.exists(tmp_path / "s" / "sweep.json")


def test_cli_adversary_verify(tmp_path, capsys):
    out_dir = tmp_path / "r"
    assert main(["adversary-verify", "--seed", "1", "--trials", "20", "--out", str(out_dir)]) == 0
    report = json.loads((out_dir / "adversary.json").read_text())
    assert len(report["instances"]) == 20 and report["max_residual"] <= 1e-9


def test_cli_lab_commands(tmp_path, capsys):
    assert main(["lowdepth-verify", "--trials", "5"]) == 0
    assert main(["counting-progress", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "progress.csv").exists()
    assert main(["recover-register"]) == 0
    bad = _write(tmp_path, "rec.json", {"probs": [0.45, 0.05, 0.05, 0.45]})
    assert main(["recover-register", "--config", bad]) == 1
    capsys.readouterr()
