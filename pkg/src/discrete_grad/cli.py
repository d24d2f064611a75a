"""Command line entry point: ``discrete-grad <subcommand> [flags]``.

Settings resolve in three layers: built-in defaults per subcommand, then the
JSON file given by ``--config``, then explicit flags. Every subcommand writes
``config.json`` (the resolved settings), ``results.csv`` and ``summary.json``
into ``--out``.

Failures print one JSON line on stderr, e.g.
``{"error": "malformed_config", "exit_code": 3, "message": "..."}``.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_dataset
from .errors import ConfigError, DataError, DiscreteGradError
from .estimators import EstimatorConfig, Schedule
from .experiments import (
    AE_TAU_BACKWARD,
    AE_TAU_FORWARD,
    BV_TAU_B_SWEEP,
    BV_TAU_F_SWEEP,
    ExperimentGrid,
    aggregate,
    best_cell,
    bias_variance_pairs,
    bias_variance_sweep,
    cell_run,
    emit_csv,
    gap_sweep,
    gradstats_rows,
    run_cells,
    run_grid,
    run_schedule_grid,
    spearman,
    write_wide_csv,
)
from .models import ModelSpec, load_params, save_params
from .training import default_run, train

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4

COMMON = {
    "schema_version": SCHEMA_VERSION,
    "model": "vae8x4",
    "dataset": "mnist",
    "subset": 2000,
    "val_subset": 1000,
    "epochs": 20,
    "batch_size": 64,
    "learning_rate": None,  # None keeps the model preset's value
    "optimizer": None,
    "seed": 0,
    "workers": 1,
    "estimator": None,
}

DEFAULTS = {
    "train": {"tau_forward": 1.0, "tau_backward": 1.0},
    "grid": {
        "model": "binary_ae",
        "tau_forward_values": list(AE_TAU_FORWARD),
        "tau_backward_values": list(AE_TAU_BACKWARD),
        "seeds": [0, 1, 2],
        "coupled_only": False,
        "measure_gap": False,
        "gap_samples": 64,
    },
    "bias-variance": {
        "snapshot": None,
        "snapshot_tau_forward": 1.6,
        "snapshot_tau_backward": 1.3,
        "pairs": None,
        "n_draws": 1024,
        "n_samples": 32,
    },
    "gradient-gap": {
        "model": "binary_ae",
        "tau_forward": 0.3,
        "tau_backward_values": [0.3, 1.0, 3.0, 6.0],
        "seeds": [0, 1, 2, 3, 4],
        "gap_samples": 64,
    },
    "schedule-grid": {"seeds": [0], "interpolation": "linear"},
    "selftest": {"dataset": "synthetic"},
}


class CliError(Exception):
    def __init__(self, kind, code, message):
        super().__init__(message)
        self.kind, self.code = kind, code


def fail_line(kind, code, message):
    return json.dumps({"error": kind, "exit_code": code, "message": str(message).replace("\n", " ")})


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", EXIT_USAGE, f"{self.prog}: {message}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON settings file (see README for the schema)")
    common.add_argument("--out", help="run directory (default runs/<subcommand>)")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("--seed", type=int, help="seed, or first seed of a multi-seed sweep")
    common.add_argument("--dataset", choices=("mnist", "synthetic"))
    common.add_argument("--subset", type=int, help="number of training images")

    parser = _Parser(prog="discrete-grad", description="Decoupled straight-through Gumbel-softmax experiments")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "train": "train a single model",
        "grid": "sweep a (tau_f, tau_b, seed) grid",
        "bias-variance": "estimator bias and spread against the exact gradient",
        "gradient-gap": "gradient gap across backward temperatures",
        "schedule-grid": "train every start->end temperature schedule pair",
        "selftest": "finite-difference and sampling oracle suites",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


# ------------------------------------------------------------------ config


def load_config_file(path):
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError("malformed_config", EXIT_CONFIG, f"cannot read config {path}: {exc}")
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CliError("malformed_config", EXIT_CONFIG, f"{path}: invalid JSON ({exc})")
    if not isinstance(cfg, dict):
        raise CliError("malformed_config", EXIT_CONFIG, f"{path}: top level must be an object")
    return cfg


def resolve(command, args):
    cfg = dict(COMMON)
    cfg.update(DEFAULTS[command])
    if args.config:
        user = load_config_file(args.config)
        unknown = sorted(set(user) - set(cfg))
        if unknown:
            raise CliError("malformed_config", EXIT_CONFIG, f"unknown config keys for {command}: {unknown}")
        version = user.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise CliError("malformed_config", EXIT_CONFIG, f"schema_version {version!r} unsupported (expected {SCHEMA_VERSION})")
        cfg.update(user)
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.dataset is not None:
        cfg["dataset"] = args.dataset
    if args.subset is not None:
        cfg["subset"] = args.subset
    if args.seed is not None:
        if "seeds" in cfg:
            cfg["seeds"] = [args.seed + i for i in range(len(cfg["seeds"]))]
        cfg["seed"] = args.seed
    return cfg


def _schedule(d):
    if d is None:
        return None
    if not isinstance(d, dict) or not {"start", "end"} <= set(d):
        raise ConfigError("a schedule needs 'start' and 'end'")
    return Schedule(float(d["start"]), float(d["end"]), 1, d.get("interpolation", "linear"))


def base_run(cfg):
    """RunConfig from resolved settings (estimator taus filled in per subcommand)."""
    try:
        model = cfg["model"]
        if isinstance(model, dict):
            preset, spec = None, ModelSpec.from_dict(model)
        else:
            preset, spec = model, None
        over = {
            "dataset": cfg["dataset"],
            "epochs": int(cfg["epochs"]),
            "batch_size": int(cfg["batch_size"]),
            "seed": int(cfg["seed"]),
        }
        if cfg["learning_rate"] is not None:
            over["learning_rate"] = float(cfg["learning_rate"])
        if cfg["optimizer"] is not None:
            over["optimizer"] = cfg["optimizer"]
        run = default_run(preset or "vae8x4", **over)
        if spec is not None:
            run = run.replace(model=spec)
        est = cfg.get("estimator")
        if est is not None:
            if not isinstance(est, dict):
                raise ConfigError("'estimator' must be an object")
            tf = float(est.get("tau_forward", cfg.get("tau_forward", 1.0)))
            run = run.replace(estimator=EstimatorConfig(
                est.get("kind", "decoupled_st_gs"), tf, float(est.get("tau_backward", tf)),
                _schedule(est.get("schedule_forward")), _schedule(est.get("schedule_backward")),
            ))
        elif "tau_backward" in cfg:
            run = run.replace(estimator=EstimatorConfig("decoupled_st_gs", float(cfg["tau_forward"]),
                                                        float(cfg["tau_backward"])))
        return run
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        raise CliError("malformed_config", EXIT_CONFIG, f"{type(exc).__name__}: {exc}")


def load_data(cfg):
    try:
        return load_dataset(cfg["dataset"], cfg["subset"], cfg["val_subset"], seed=cfg["seed"])
    except FileNotFoundError as exc:
        raise CliError("missing_dataset", EXIT_DATA, exc)
    except DataError as exc:
        raise CliError("bad_dataset", EXIT_DATA, exc)


def _positive_list(cfg, key):
    vals = cfg[key]
    if not isinstance(vals, list) or not vals:
        raise CliError("malformed_config", EXIT_CONFIG, f"'{key}' must be a non-empty list")
    return tuple(vals)


# ---------------------------------------------------------------- commands


def cmd_train(cfg, out):
    run = base_run(cfg)
    data = load_data(cfg)
    est = run.estimator
    results = run_cells([(run, est.tau_forward, est.tau_backward)], data)
    cell = results[0]
    emit_csv(results, out / "results.csv")
    summary = {"final_val_loss": cell.final_val_loss, "metrics": cell.metrics,
               "runtime_seconds": cell.runtime_seconds, "error": cell.error}
    if cell.error:
        raise CliError("run_failed", EXIT_FAILURE, cell.error)
    return summary


def cmd_grid(cfg, out):
    base = base_run(cfg)
    try:
        grid = ExperimentGrid(
            _positive_list(cfg, "tau_forward_values"), _positive_list(cfg, "tau_backward_values"),
            tuple(int(s) for s in _positive_list(cfg, "seeds")), base,
            coupled_only=bool(cfg["coupled_only"]), measure_gap=bool(cfg["measure_gap"]),
            gap_samples=int(cfg["gap_samples"]),
        )
    except ConfigError as exc:
        raise CliError("malformed_config", EXIT_CONFIG, exc)
    data = load_data(cfg)
    results = run_grid(grid, data, int(cfg["workers"]))
    emit_csv(results, out / "results.csv")
    return _grid_summary(results)


def _grid_summary(results):
    full = best_cell(results)
    diag = best_cell(results, diagonal_only=True)
    return {
        "n_cells": len(results),
        "n_errors": sum(1 for r in results if r.error),
        "best": None if full is None else {"tau_f": full[0], "tau_b": full[1], "final_val_loss_mean": full[2]},
        "best_diagonal": None if diag is None else {"tau_f": diag[0], "tau_b": diag[1], "final_val_loss_mean": diag[2]},
    }


def cmd_bias_variance(cfg, out):
    base = base_run(cfg)
    data = load_data(cfg)
    spec = base.model
    if cfg["snapshot"]:
        try:
            params = load_params(cfg["snapshot"])
        except FileNotFoundError as exc:
            raise CliError("missing_snapshot", EXIT_DATA, exc)
        snapshot = str(cfg["snapshot"])
    else:
        run = cell_run(base, float(cfg["snapshot_tau_forward"]), float(cfg["snapshot_tau_backward"]), base.seed)
        params = train(run, data).params
        snapshot = str(out / "snapshot.ckpt")
        save_params(params, snapshot, extra={"run": run.to_dict()})
    pairs = cfg["pairs"] or bias_variance_pairs(cfg["snapshot_tau_forward"], cfg["snapshot_tau_backward"])
    pairs = [(float(a), float(b)) for a, b in pairs]
    split = data.val if data.n_val else data.train
    x = split[: int(cfg["n_samples"])]
    stats = bias_variance_sweep(params, x, spec, pairs, n_draws=int(cfg["n_draws"]), seed=base.seed)
    write_wide_csv(gradstats_rows(stats), out / "results.csv")
    summary = {"snapshot": snapshot, "n_pairs": len(stats), "trends": _bv_trends(stats, cfg)}
    return summary


def _bv_trends(stats, cfg):
    """Spearman correlations of bias/std along the two default sweeps (when present)."""
    by_pair = {(s.tau_forward, s.tau_backward): s for s in stats}
    trends = {}
    tf0, tb0 = float(cfg["snapshot_tau_forward"]), float(cfg["snapshot_tau_backward"])
    for name, axis in (("tau_b_sweep", [(tf0, tb) for tb in BV_TAU_B_SWEEP]),
                       ("tau_f_sweep", [(tf, tb0) for tf in BV_TAU_F_SWEEP])):
        if all(p in by_pair for p in axis):
            xs = [p[1] if name == "tau_b_sweep" else p[0] for p in axis]
            trends[name] = {
                "spearman_bias": spearman(xs, [by_pair[p].relative_bias for p in axis]),
                "spearman_std": spearman(xs, [by_pair[p].relative_std for p in axis]),
            }
    return trends


def cmd_gradient_gap(cfg, out):
    base = base_run(cfg)
    data = load_data(cfg)
    results = gap_sweep(base, data, float(cfg["tau_forward"]), _positive_list(cfg, "tau_backward_values"),
                        tuple(int(s) for s in _positive_list(cfg, "seeds")), int(cfg["workers"]),
                        int(cfg["gap_samples"]))
    emit_csv(results, out / "results.csv")
    agg = aggregate(results)
    means = {str(tb): stats["gradient_gap"][0] for (tf, tb), stats in agg.items() if "gradient_gap" in stats}
    ordered = [agg[k]["gradient_gap"][0] for k in sorted(agg, key=lambda k: k[1]) if "gradient_gap" in agg[k]]
    return {
        "n_cells": len(results),
        "n_errors": sum(1 for r in results if r.error),
        "mean_gap_by_tau_b": means,
        "nonincreasing": bool(all(b <= a for a, b in zip(ordered, ordered[1:]))),
    }


def cmd_schedule_grid(cfg, out):
    base = base_run(cfg)
    data = load_data(cfg)
    seeds = tuple(int(s) for s in _positive_list(cfg, "seeds"))
    try:
        results = run_schedule_grid(base, data, seeds, int(cfg["workers"]), cfg["interpolation"])
    except ConfigError as exc:
        raise CliError("malformed_config", EXIT_CONFIG, exc)
    emit_csv(results, out / "results.csv")
    return _grid_summary(results)


def cmd_selftest(cfg, out):
    from .selftest import run_all

    checks = run_all(seed=int(cfg["seed"]), log=lambda line: print(line, flush=True))
    rows = [{"check": c.name, "passed": int(c.passed), "seconds": c.seconds, "detail": c.detail} for c in checks]
    write_wide_csv(rows, out / "results.csv")
    summary = {"passed": all(c.passed for c in checks),
               "checks": [dict(r, failures=c.failures[:20]) for r, c in zip(rows, checks)]}
    if not summary["passed"]:
        _write_json(out / "summary.json", summary)
        raise CliError("selftest_failed", EXIT_FAILURE, "; ".join(c.name for c in checks if not c.passed))
    return summary


COMMANDS = {
    "train": cmd_train,
    "grid": cmd_grid,
    "bias-variance": cmd_bias_variance,
    "gradient-gap": cmd_gradient_gap,
    "schedule-grid": cmd_schedule_grid,
    "selftest": cmd_selftest,
}


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def cli(argv=None) -> int:
    """Run the CLI and return the exit code (never raises on expected failures)."""
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args.command, args)
        if int(cfg["workers"]) < 1:
            raise CliError("malformed_config", EXIT_CONFIG, "workers must be >= 1")
        out = Path(args.out or Path("runs") / args.command)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", dict(cfg, command=args.command))
        t0 = time.perf_counter()
        summary = COMMANDS[args.command](cfg, out)
        summary["wall_clock_seconds"] = time.perf_counter() - t0
        _write_json(out / "summary.json", summary)
        return EXIT_OK
    except CliError as exc:
        print(fail_line(exc.kind, exc.code, exc), file=sys.stderr)
        return exc.code
    except DiscreteGradError as exc:
        print(fail_line(type(exc).__name__, EXIT_FAILURE, exc), file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(fail_line("io_error", EXIT_FAILURE, exc), file=sys.stderr)
        return EXIT_FAILURE


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
