"""Monte-Carlo studies: per-method RMSE, deterioration against a baseline, runtime.

Trials are generated and solved in fixed-size chunks. A chunk's contents
depend only on ``(seed, trial indices)``, and per-trial errors are
concatenated in chunk order before any reduction, so reports are identical
whether chunks run inline or in worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .. import kernels as _kernels
from ..hs import hs as _hs
from .oracles import mahalanobis_minimizer, reprojection_minimizer
from .scenes import NViewConfig, TrialBatch, TwoViewConfig, n_view_batch, two_view_batch

CHUNK = 500

TWO_VIEW_METHODS = ("midpoint", "dlt", "lost", "lostu", "lostu_corrupted", "hs")
TWO_VIEW_BASELINE = "hs"
N_VIEW_METHODS = ("midpoint", "dlt", "lost", "lostu", "lostu_diag",
                  "dlt+lm_reproj", "dlt+lm_mahalanobis")
N_VIEW_BASELINE = "dlt+lm_reproj"

TWO_VIEW_SWEEPS = {
    "sigma_px": (0.5, 1.0, 2.0, 3.0, 4.0, 5.0),
    "pose_scale": (0.0, 0.5, 1.0, 1.5, 2.0),
    "z1": (-2.0, -4.0, -6.0, -8.0, -10.0),
    "y1": (-4.0, -2.0, 0.0, 2.0, 4.0),
}
N_VIEW_SWEEPS = {
    "sigma_px": (0.5, 1.0, 2.0, 4.0, 8.0),
    "sigma_phi": (0.01, 0.02, 0.05, 0.1, 0.2),
    "sigma_c": (0.005, 0.01, 0.02, 0.05, 0.1),
    "depth_scale": (0.25, 0.5, 1.0, 2.0, 4.0),
    "m": (5, 10, 20, 50, 100, 200),
}
_SWEEP_ALIASES = {"depth-scale": "depth_scale"}

CSV_COLUMNS = ("method", "sweep_param", "sweep_value", "rmse", "deterioration_pct",
               "mean_runtime_us", "trials_ok", "trials_excluded", "seed")


class UnknownSweep(ValueError):
    pass


def _solve_hs(k, b):
    X, st, _ = _hs(b.Kinv, b.R, b.c, b.px)
    return X, st


def _solve_lm_reproj(k, b):
    X0, st = k.dlt(b.Kinv, b.R, b.c, b.px)
    X, _ = reprojection_minimizer(b.Kinv, b.R, b.c, b.px, b.sigma, X0)
    return X, st


def _solve_lm_mahalanobis(k, b):
    X0, st = k.dlt(b.Kinv, b.R, b.c, b.px)
    X, _ = mahalanobis_minimizer(b.Kinv, b.R, b.c, b.px, b.cov2d, b.rot_cov, b.center_cov,
                                 b.kvar, X0)
    return X, st


# name -> solver(kernel_module, batch) -> (X (T, 3), status (T,))
METHODS: Dict[str, Callable] = {
    "midpoint": lambda k, b: k.midpoint(b.Kinv, b.R, b.c, b.px),
    "dlt": lambda k, b: k.dlt(b.Kinv, b.R, b.c, b.px),
    "lost": lambda k, b: k.lost(b.Kinv, b.R, b.c, b.px, b.sigma),
    "lostu": lambda k, b: k.lostu(b.Kinv, b.R, b.c, b.px, b.cov2d, b.rot_cov,
                                  b.center_cov, b.kvar),
    "lostu_diag": lambda k, b: k.lostu(b.Kinv, b.R, b.c, b.px, b.cov2d, b.rot_cov,
                                       b.center_cov, b.kvar, None, True),
    "lostu_corrupted": lambda k, b: k.lostu(b.Kinv, b.R, b.c, b.px, b.cov2d,
                                            b.corrupt_rot_cov, b.corrupt_center_cov, b.kvar),
    "hs": _solve_hs,
    "dlt+lm_reproj": _solve_lm_reproj,
    "dlt+lm_mahalanobis": _solve_lm_mahalanobis,
}


@dataclass
class BenchReport:
    """One method at one sweep value."""

    method: str
    sweep_param: str
    sweep_value: Optional[float]
    rmse: float
    deterioration_pct: float
    mean_runtime_us: Optional[float]
    trials_ok: int
    trials_excluded: int
    seed: int
    config: dict = field(default_factory=dict, repr=False)

    def row(self):
        return {k: _fmt(getattr(self, k)) for k in CSV_COLUMNS}


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def deterioration(rmse, baseline):
    """Percent RMSE increase over the baseline, 0 when the baseline error is 0."""
    if baseline == 0 or not math.isfinite(baseline):
        return 0.0
    return 100.0 * (rmse - baseline) / baseline


def _noise_free(cfg):
    pose = cfg.sigma_phi == 0 and cfg.sigma_c == 0
    if isinstance(cfg, TwoViewConfig):
        pose = pose or cfg.pose_scale == 0
    return cfg.sigma_px == 0 and pose


def _estimator_inputs(b: TrialBatch) -> TrialBatch:
    """Fill in weights where nothing was declared.

    Equal pixel deviations cancel out of the sine weights, and a problem with
    no declared noise is solved exactly by any weighting, so a unit pixel
    covariance stands in for zero.
    """
    if not b.sigma.any():
        b.sigma = np.ones_like(b.sigma)
        if not (b.rot_cov.any() or b.center_cov.any() or b.kvar.any()):
            b.cov2d = np.broadcast_to(np.eye(2), b.cov2d.shape).copy()
    return b


def _make_batch(cfg, trials):
    if isinstance(cfg, TwoViewConfig):
        b = two_view_batch(cfg, trials)
    else:
        b = n_view_batch(cfg, trials)
    return _estimator_inputs(b)


def _chunk_errors(cfg, methods, start, stop, backend):
    """Per-trial position errors (NaN where a method failed) for trials ``start..stop``."""
    k = _kernels.get_backend(backend)
    b = _make_batch(cfg, np.arange(start, stop))
    out = {}
    with np.errstate(all="ignore"):
        for name in methods:
            X, st = METHODS[name](k, b)
            e = np.linalg.norm(X - b.X, axis=1)
            e[(np.asarray(st) != 0) | ~np.isfinite(e)] = np.nan
            out[name] = e
    return out


def bench_threads(threads=None):
    """Worker count: the argument, else ``TRI_BENCH_THREADS``, else the CPU count."""
    if threads is None:
        env = os.environ.get("TRI_BENCH_THREADS", "").strip()
        threads = int(env) if env else (os.cpu_count() or 1)
    if threads < 1:
        raise ValueError("thread count must be at least 1")
    return threads


def trial_errors(cfg, methods, threads=None, backend=None, chunk=CHUNK):
    """Errors of every trial of ``cfg`` for each method, in trial order."""
    bounds = [(s, min(s + chunk, cfg.trials)) for s in range(0, cfg.trials, chunk)]
    threads = min(bench_threads(threads), len(bounds))
    if threads == 1:
        parts = [_chunk_errors(cfg, methods, s, e, backend) for s, e in bounds]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_chunk_errors, cfg, methods, s, e, backend) for s, e in bounds]
            parts = [f.result() for f in futures]
    return {m: np.concatenate([p[m] for p in parts]) for m in methods}


def measure_runtime(method, workload: TrialBatch, min_calls=10_000, repeats=3, backend=None):
    """Mean time per triangulation in microseconds.

    The workload is tiled until one batched call covers at least
    ``min_calls`` triangulations. One warm-up call is discarded and the
    fastest of ``repeats`` timed calls is used.
    """
    k = _kernels.get_backend(backend)
    fn = METHODS[method]
    reps = max(1, math.ceil(min_calls / len(workload)))
    idx = np.tile(np.arange(len(workload)), reps)
    batch = workload.subset(idx)
    with np.errstate(all="ignore"):
        fn(k, batch)
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn(k, batch)
            best = min(best, time.perf_counter() - t0)
    return 1e6 * best / len(batch)


def _config_dict(cfg):
    return dataclasses.asdict(cfg)


def _run(cfg, methods, baseline, sweep, grid, sweeps, threads, timing, backend):
    if sweep is not None:
        sweep = _SWEEP_ALIASES.get(sweep, sweep)
        if sweep not in sweeps:
            raise UnknownSweep(f"unknown sweep parameter {sweep!r}; "
                               f"expected one of {sorted(sweeps)}")
        values = list(grid) if grid is not None else list(sweeps[sweep])
    else:
        values = [None]
    reports = []
    for value in values:
        c = cfg if value is None else cfg.replace(**{sweep: type(getattr(cfg, sweep))(value)})
        errs = trial_errors(c, methods, threads, backend)
        rmse = {}
        for m in methods:
            e = errs[m][np.isfinite(errs[m])]
            rmse[m] = float(np.sqrt(np.mean(e ** 2))) if len(e) else math.nan
        runtime = {}
        if timing:
            workload = _make_batch(c, np.arange(min(c.trials, 1000)))
            runtime = {m: measure_runtime(m, workload, backend=backend) for m in methods}
        # without noise every error is rounding and the ratio is undefined
        base = 0.0 if _noise_free(c) else rmse[baseline]
        for m in methods:
            ok = int(np.isfinite(errs[m]).sum())
            reports.append(BenchReport(
                method=m, sweep_param=sweep or "nominal",
                sweep_value=None if value is None else float(value),
                rmse=rmse[m], deterioration_pct=deterioration(rmse[m], base),
                mean_runtime_us=runtime.get(m), trials_ok=ok,
                trials_excluded=c.trials - ok, seed=c.seed, config=_config_dict(c)))
    return reports


def run_two_view_study(config: TwoViewConfig = None, sweep: Optional[str] = None,
                       grid: Optional[Sequence[float]] = None, threads=None, timing=False,
                       methods=TWO_VIEW_METHODS, backend=None) -> List[BenchReport]:
    """Two cameras looking at the origin; deterioration is measured against HS.

    ``sweep`` is one of ``sigma_px``, ``pose_scale``, ``z1``, ``y1`` (or
    ``None`` for the nominal configuration). ``grid`` overrides the default
    values of the swept parameter.
    """
    cfg = config or TwoViewConfig()
    methods = tuple(dict.fromkeys(tuple(methods) + (TWO_VIEW_BASELINE,)))
    return _run(cfg, methods, TWO_VIEW_BASELINE, sweep, grid, TWO_VIEW_SWEEPS,
                threads, timing, backend)


def run_n_view_study(config: NViewConfig = None, sweep: Optional[str] = None,
                     grid: Optional[Sequence[float]] = None, threads=None, timing=False,
                     methods=N_VIEW_METHODS, backend=None) -> List[BenchReport]:
    """Many cameras observing one point; deterioration is against reprojection LM.

    ``sweep`` is one of ``sigma_px``, ``sigma_phi``, ``sigma_c``,
    ``depth_scale`` (also ``depth-scale``) or ``m``.
    """
    cfg = config or NViewConfig()
    methods = tuple(dict.fromkeys(tuple(methods) + (N_VIEW_BASELINE,)))
    return _run(cfg, methods, N_VIEW_BASELINE, sweep, grid, N_VIEW_SWEEPS,
                threads, timing, backend)


def reports_to_csv(reports: Sequence[BenchReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def reports_to_json(reports: Sequence[BenchReport]) -> str:
    def clean(x):
        return None if isinstance(x, float) and not math.isfinite(x) else x
    rows = [{**{k: clean(getattr(r, k)) for k in CSV_COLUMNS}, "config": r.config}
            for r in reports]
    return json.dumps(rows, indent=2, sort_keys=True)
