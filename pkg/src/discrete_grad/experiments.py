"""Temperature grids, fidelity sweeps and their CSV output.

Grid results are written in long format::

    tau_f,tau_b,seed,metric,value

with one row per (cell, metric) and aggregate rows whose seed is ``agg`` and
whose metric names carry ``_mean`` / ``_std`` suffixes. Floats are written
with 17 significant digits so a round trip is exact.
"""
from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import DatasetHandle
from .errors import ConfigError
from .estimators import EstimatorConfig, Schedule
from .oracle import GapRecord, GradStats, bias_variance, gradient_gap
from .training import RunConfig, train

CSV_HEADER = ("tau_f", "tau_b", "seed", "metric", "value")

# (forward, backward) schedules as (start, end); equal ends mean a constant temperature
SCHEDULE_PAIRS = [
    ((1.0, 0.3), (1.0, 0.3)),
    ((1.0, 0.3), (1.0, 1.0)),
    ((1.0, 0.3), (1.0, 2.0)),
    ((1.0, 1.0), (1.0, 0.3)),
    ((1.0, 1.0), (1.0, 1.0)),
    ((1.0, 1.0), (1.0, 2.0)),
    ((1.0, 2.0), (1.0, 0.3)),
    ((1.0, 2.0), (1.0, 1.0)),
    ((1.0, 2.0), (1.0, 2.0)),
    ((0.3, 0.03), (5.0, 3.0)),
    ((0.3, 0.03), (1.0, 3.0)),
    ((0.3, 2.0), (5.0, 3.0)),
    ((0.3, 2.0), (1.0, 3.0)),
]

AE_TAU_FORWARD = (0.3, 0.7, 1.0, 2.0, 3.0)
AE_TAU_BACKWARD = (0.3, 0.7, 1.0, 2.0, 3.0, 6.0)
VAE_TAUS = (0.3, 0.7, 1.0, 2.0, 3.0)


def fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


@dataclass(frozen=True)
class ExperimentGrid:
    tau_forward_values: tuple
    tau_backward_values: tuple
    seeds: tuple
    base: RunConfig
    coupled_only: bool = False
    measure_gap: bool = False
    gap_samples: int = 64

    def __post_init__(self):
        if not (self.tau_forward_values and self.tau_backward_values and self.seeds):
            raise ConfigError("grid axes must be non-empty")
        if any(t <= 0 for t in (*self.tau_forward_values, *self.tau_backward_values)):
            raise ConfigError("grid temperatures must be positive")

    def cells(self):
        if self.coupled_only:
            pairs = [(t, t) for t in self.tau_forward_values if t in self.tau_backward_values]
            if not pairs:
                pairs = [(t, t) for t in self.tau_forward_values]
        else:
            pairs = [(tf, tb) for tf in self.tau_forward_values for tb in self.tau_backward_values]
        return [(tf, tb, s) for tf, tb in pairs for s in self.seeds]


@dataclass
class CellResult:
    tau_forward: object
    tau_backward: object
    seed: int
    metrics: Dict[str, float] = field(default_factory=dict)
    runtime_seconds: float = 0.0
    error: Optional[str] = None

    @property
    def final_val_loss(self):
        return self.metrics.get("final_val_loss", float("nan"))

    @property
    def key(self):
        return (str(self.tau_forward), str(self.tau_backward), self.seed)


def cell_run(base: RunConfig, tau_forward, tau_backward, seed: int) -> RunConfig:
    est = base.estimator
    kind = "decoupled_st_gs" if est.kind in ("st_gs", "decoupled_st_gs") else est.kind
    return base.replace(estimator=EstimatorConfig(kind, tau_forward, tau_backward), seed=seed)


def cell_metrics(result, run: RunConfig) -> Dict[str, float]:
    metrics = {"final_val_loss": result.final_val_loss}
    for key, value in result.final_val.items():
        if key != "loss":
            metrics[f"final_val_{key}"] = value
    metrics["final_train_loss"] = result.epochs[-1]["train_loss"] if run.epochs else float("nan")
    return metrics


def run_cell(run: RunConfig, tau_forward, tau_backward, data: DatasetHandle,
             measure_gap=False, gap_samples=64) -> CellResult:
    """Train one fully specified run; exceptions become an error row."""
    t0 = time.perf_counter()
    try:
        result = train(run, data)
        metrics = cell_metrics(result, run)
        if measure_gap:
            x = data.val[:gap_samples] if data.n_val else data.train[:gap_samples]
            metrics["gradient_gap"] = gradient_gap(result.params, x, run.model, run.estimator, seed=run.seed).gap
        return CellResult(tau_forward, tau_backward, run.seed, metrics, time.perf_counter() - t0)
    except Exception as exc:  # a diverging cell is a result, not a crash
        msg = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        return CellResult(tau_forward, tau_backward, run.seed, {}, time.perf_counter() - t0, error=msg)


_WORKER_DATA = None


def _init_worker(data):
    global _WORKER_DATA
    _WORKER_DATA = data


def _worker_cell(job):
    return run_cell(*job[:3], _WORKER_DATA, *job[3:])


def run_cells(jobs, data: DatasetHandle, workers: int = 1, measure_gap=False, gap_samples=64) -> List[CellResult]:
    """``jobs`` holds ``(run, tau_f_label, tau_b_label)``; output sorted by cell."""
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    jobs = [(run, tf, tb, measure_gap, gap_samples) for run, tf, tb in jobs]
    if workers == 1:
        results = [run_cell(run, tf, tb, data, g, n) for run, tf, tb, g, n in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(data,)) as pool:
            results = list(pool.map(_worker_cell, jobs))
    return sorted(results, key=lambda r: r.key)


def run_grid(grid: ExperimentGrid, data: DatasetHandle, workers: int = 1) -> List[CellResult]:
    """Train every (tau_f, tau_b, seed) cell once; results sorted by cell."""
    jobs = [(cell_run(grid.base, tf, tb, s), tf, tb) for tf, tb, s in grid.cells()]
    return run_cells(jobs, data, workers, grid.measure_gap, grid.gap_samples)


def schedule_runs(base: RunConfig, interpolation: str = "linear", schedules=SCHEDULE_PAIRS):
    """One RunConfig per scheduled (tau_f, tau_b) pair; labels like ``1->0.3``."""
    out = []
    for (fs, fe), (bs, be) in schedules:
        sf = Schedule(fs, fe, 1, interpolation) if fs != fe else None
        sb = Schedule(bs, be, 1, interpolation) if bs != be else None
        est = EstimatorConfig("decoupled_st_gs", fs, bs, sf, sb)
        out.append((_label(fs, fe), _label(bs, be), base.replace(estimator=est)))
    return out


def _label(start, end):
    return f"{start:g}" if start == end else f"{start:g}->{end:g}"


def run_schedule_grid(base: RunConfig, data: DatasetHandle, seeds=(0,), workers: int = 1,
                      interpolation: str = "linear") -> List[CellResult]:
    """Train every start->end schedule pair of the scheduling table for each seed."""
    jobs = [(run.replace(seed=s), lf, lb) for lf, lb, run in schedule_runs(base, interpolation) for s in seeds]
    return run_cells(jobs, data, workers)


# --------------------------------------------------------------- analysis


def aggregate(results: Sequence[CellResult]):
    """Per-cell mean/std over seeds: ``{(tau_f, tau_b): {metric: (mean, std|None, n)}}``."""
    groups: Dict[tuple, Dict[str, list]] = {}
    order = []
    for r in results:
        key = (r.tau_forward, r.tau_backward)
        if key not in groups:
            groups[key] = {}
            order.append(key)
        if r.error:
            continue
        for m, v in r.metrics.items():
            groups[key].setdefault(m, []).append(v)
    out = {}
    for key in order:
        stats = {}
        for m, vals in groups[key].items():
            arr = np.asarray(vals, dtype=float)
            std = float(arr.std(ddof=1)) if arr.size > 1 else None
            stats[m] = (float(arr.mean()), std, int(arr.size))
        out[key] = stats
    return out


def best_cell(results, metric="final_val_loss", diagonal_only=False):
    """(tau_f, tau_b, mean) minimising the seed-mean of ``metric``."""
    agg = aggregate(results)
    best = None
    for (tf, tb), stats in agg.items():
        if diagonal_only and tf != tb:
            continue
        if metric not in stats:
            continue
        mean = stats[metric][0]
        if best is None or mean < best[2]:
            best = (tf, tb, mean)
    return best


def pivot(results, metric="final_val_loss"):
    """Heatmap matrix of seed means: rows tau_b, columns tau_f."""
    agg = aggregate(results)
    tfs = sorted({k[0] for k in agg})
    tbs = sorted({k[1] for k in agg})
    mat = np.full((len(tbs), len(tfs)), np.nan)
    for (tf, tb), stats in agg.items():
        if metric in stats:
            mat[tbs.index(tb), tfs.index(tf)] = stats[metric][0]
    return tbs, tfs, mat


# -------------------------------------------------------------------- CSV


def csv_rows(results: Sequence[CellResult]):
    rows = []
    for r in results:
        if r.error:
            rows.append((r.tau_forward, r.tau_backward, r.seed, "error", r.error))
            continue
        for m in sorted(r.metrics):
            rows.append((r.tau_forward, r.tau_backward, r.seed, m, float(r.metrics[m])))
        rows.append((r.tau_forward, r.tau_backward, r.seed, "runtime_seconds", float(r.runtime_seconds)))
    for (tf, tb), stats in aggregate(results).items():
        for m in sorted(stats):
            mean, std, _ = stats[m]
            rows.append((tf, tb, "agg", f"{m}_mean", mean))
            if std is not None:
                rows.append((tf, tb, "agg", f"{m}_std", std))
    return rows


def emit_csv(results: Sequence[CellResult], path):
    if not results:
        raise ValueError("no results to write")
    rows = csv_rows(results)
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    """Rows as dicts; numeric fields parsed to float where possible."""
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            parsed = {}
            for k, v in row.items():
                try:
                    parsed[k] = float(v)
                except ValueError:
                    parsed[k] = v
            out.append(parsed)
    return out


def write_wide_csv(rows: Sequence[dict], path):
    if not rows:
        raise ValueError("no rows to write")
    keys = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([fmt(r[k]) for k in keys])
    return Path(path)


# ------------------------------------------------------- fidelity sweeps

BV_TAU_B_SWEEP = (0.5, 1.0, 1.3, 2.5)
BV_TAU_F_SWEEP = (0.5, 1.0, 1.6, 2.5)


def bias_variance_pairs(tau_forward=1.6, tau_backward=1.3):
    pairs = [(tau_forward, tb) for tb in BV_TAU_B_SWEEP]
    pairs += [(tf, tau_backward) for tf in BV_TAU_F_SWEEP if (tf, tau_backward) not in pairs]
    return pairs


def bias_variance_sweep(params, x, spec, pairs, n_draws=1024, seed=0, kind="decoupled_st_gs") -> List[GradStats]:
    """GradStats per (tau_f, tau_b); every pair sees the same noise stream."""
    return [
        bias_variance(params, x, spec, EstimatorConfig(kind, tf, tb), n_draws=n_draws, rng=np.random.default_rng(seed))
        for tf, tb in pairs
    ]


def gradstats_rows(stats: Sequence[GradStats]):
    return [{"tau_f": s.tau_forward, "tau_b": s.tau_backward, **s.as_row()} for s in stats]


def gap_rows(records: Sequence[GapRecord]):
    return [{"tau_f": r.tau_forward, "tau_b": r.tau_backward, "seed": r.seed, "gap": r.gap} for r in records]


def gap_sweep(base: RunConfig, data: DatasetHandle, tau_forward=0.3, tau_backward=(0.3, 1.0, 3.0, 6.0),
              seeds=(0, 1, 2, 3, 4), workers=1, gap_samples=64) -> List[CellResult]:
    """Train one model per (tau_b, seed) at fixed tau_f and measure its gradient gap."""
    grid = ExperimentGrid((tau_forward,), tuple(tau_backward), tuple(seeds), base, measure_gap=True,
                          gap_samples=gap_samples)
    return run_grid(grid, data, workers)


def spearman(x, y) -> float:
    from scipy.stats import spearmanr

    if np.ptp(np.asarray(x, float)) == 0 or np.ptp(np.asarray(y, float)) == 0:
        return 0.0  # no ordering to correlate
    rho = spearmanr(x, y).statistic
    return float(rho) if not math.isnan(rho) else 0.0
