"""Command-line entry point.

Exit codes: 0 success, 1 validation or contract failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

from .adversary import (
    adversary_sweep,
    grover_counting_algorithm,
    hard_counting_sequence,
    lowdepth_sweep,
    make_estimator_unitary,
    random_query_algorithm,
    recover_query_register,
)
from .errors import NimeanError
from .harness import ExperimentConfig, load_config, result_record, run_trials

RESIDUAL_TOL = 1e-9
COMMANDS = ("estimate-bounded", "estimate-subgaussian", "baseline-mom", "sweep",
            "adversary-verify", "lowdepth-verify", "counting-progress", "recover-register")
ESTIMATOR_OF = {"estimate-bounded": "bounded", "estimate-subgaussian": "subgaussian",
                "baseline-mom": "mom"}


class UsageError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nimean", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--trials", type=int, help="number of trials or instances")
        p.add_argument("--format", choices=("json", "csv"), default="json",
                       help="stdout format")
    return ap


def _read_json(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc


def _experiment_config(args) -> ExperimentConfig:
    if args.config is None:
        raise UsageError(f"{args.command} requires --config")
    if not os.path.isfile(args.config):
        raise UsageError(f"config file not found: {args.config}")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.trials is not None:
        cfg.trials = args.trials
    cfg.validate()
    return cfg


def _rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v
                        for k, v in r.items()})
    return buf.getvalue()


def _emit(args, payload: dict, rows: list[dict] | None, stem: str) -> None:
    text_json = json.dumps(payload, indent=2, sort_keys=True, default=float)
    text_csv = _rows_csv(rows if rows is not None else [payload])
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"{stem}.json"), "w") as fh:
            fh.write(text_json)
        with open(os.path.join(args.out, f"{stem}.csv"), "w") as fh:
            fh.write(text_csv)
    sys.stdout.write(text_json + "\n" if args.format == "json" else text_csv)


def cmd_estimate(args) -> int:
    cfg = _experiment_config(args)
    wanted = ESTIMATOR_OF[args.command]
    if cfg.estimator != wanted:
        raise UsageError(f"{args.command} needs a config with estimator={wanted!r}")
    if len(cfg.eps) != 1:
        raise UsageError(f"{args.command} takes a single eps; use sweep for a list")
    rec = result_record(cfg, cfg.eps[0], cfg.master_seed)
    _emit(args, rec, None, "result")
    return 0


def cmd_sweep(args) -> int:
    cfg = _experiment_config(args)
    sweep = run_trials(cfg, args.out)
    if args.format == "csv":
        sys.stdout.write(sweep.to_csv())
    else:
        summary = sweep.to_dict()
        summary.pop("rows")
        sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def _lab_params(args, defaults: dict) -> dict:
    d = _read_json(args.config)
    unknown = set(d) - set(defaults)
    if unknown:
        raise NimeanError(f"config: unknown fields {sorted(unknown)}")
    params = {**defaults, **d}
    if args.seed is not None:
        params["seed"] = args.seed
    if args.trials is not None and "trials" in params:
        params["trials"] = args.trials
    return params


def cmd_adversary(args) -> int:
    p = _lab_params(args, {"seed": 0, "trials": 20, "n_Q": 4, "n_W": 1, "max_T": 3,
                           "max_rank": 2})
    rows = adversary_sweep(p["trials"], p["seed"], p["n_Q"], p["n_W"], p["max_T"],
                           p["max_rank"])
    worst = max((r["residual"] for r in rows), default=0.0)
    payload = {"params": p, "max_residual": worst, "tolerance": RESIDUAL_TOL,
               "ok": worst <= RESIDUAL_TOL, "instances": rows}
    _emit(args, payload, rows, "adversary")
    return 0 if payload["ok"] else 1


def cmd_lowdepth(args) -> int:
    p = _lab_params(args, {"seed": 0, "trials": 20, "n_Q": 2, "n_W": 1, "max_T": 3})
    rows = lowdepth_sweep(p["trials"], p["seed"], p["n_Q"], p["n_W"], p["max_T"])
    worst = max((r["residual"] for r in rows), default=0.0)
    ok = worst <= RESIDUAL_TOL and all(r["queries"] == r["T"] and r["query_rounds"] <= 2
                                       for r in rows)
    _emit(args, {"params": p, "max_residual": worst, "ok": ok, "instances": rows}, rows,
          "lowdepth")
    return 0 if ok else 1


def cmd_counting(args) -> int:
    p = _lab_params(args, {"seed": 0, "n": 8, "k": 4, "m": 1, "algorithm": "grover",
                           "n_W": 0, "blocks": None})
    n, m = p["n"], p["m"]
    if p["algorithm"] == "grover":
        alg = grover_counting_algorithm(n, m * (p["blocks"] or max(1, n)), p["n_W"])
    elif p["algorithm"] == "random":
        alg = random_query_algorithm(n.bit_length(), p["n_W"], m * (p["blocks"] or max(1, n)),
                                     p["seed"])
    else:
        raise NimeanError("config.algorithm must be 'grover' or 'random'")
    trace = hard_counting_sequence(n, p["k"], m, alg, p["blocks"])
    steps_ok = all(d <= 4 * (l + 1) + 1e-9 for ch in trace.step_changes()
                   for l, d in enumerate(ch))
    blocks_ok = all(b <= 2 * m * (m + 1) + 1e-9 for b in trace.block_totals())
    payload = {"params": p, "blocks": trace.T, "chosen_i0": trace.chosen_i0,
               "overlaps": trace.overlaps, "final_overlap": trace.final_overlap,
               "step_bounds_ok": steps_ok, "block_bounds_ok": blocks_ok,
               "guaranteed_regime": trace.guaranteed}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "progress.csv"), "w") as fh:
            fh.write(trace.to_csv())
        with open(os.path.join(args.out, "progress.json"), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n"
                     if args.format == "json" else trace.to_csv())
    return 0 if steps_ok and blocks_ok else 1


def cmd_recover(args) -> int:
    p = _lab_params(args, {"seed": 0, "probs": [0.05, 0.45, 0.4, 0.1], "n_sys": 3,
                           "n_out": 2, "grid_eps": 0.25, "mu": 0.3, "fp_eps": 0.01})
    u = make_estimator_unitary(p["probs"], p["n_sys"], p["n_out"], p["seed"])
    rep = recover_query_register(u, p["n_out"], p["grid_eps"], p["mu"], p["fp_eps"])
    payload = {"params": p, **rep.to_dict()}
    _emit(args, payload, None, "recovery")
    if not rep.contract_ok:
        logging.getLogger(__name__).warning(
            "estimator puts less than 2/3 on the grid points flanking mu")
    return 0 if rep.contract_ok else 1


HANDLERS = {"estimate-bounded": cmd_estimate, "estimate-subgaussian": cmd_estimate,
            "baseline-mom": cmd_estimate, "sweep": cmd_sweep,
            "adversary-verify": cmd_adversary, "lowdepth-verify": cmd_lowdepth,
            "counting-progress": cmd_counting, "recover-register": cmd_recover}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return HANDLERS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NimeanError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
