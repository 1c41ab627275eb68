"""Command-line interface: ``lostu triangulate`` and ``lostu bench``.

Exit codes: 0 success, 2 invalid input (scene schema, config, sweep name),
3 when every track of a scene failed to triangulate.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from typing import List, Optional, Sequence, Tuple

from .bench.scenes import NViewConfig, TwoViewConfig
from .bench.study import (UnknownSweep, reports_to_csv, reports_to_json, run_n_view_study,
                          run_two_view_study)
from .errors import SchemaError, TriangulationError
from .geometry import Scene
from .sceneio import load_scene
from .triangulation import Method, PointEstimate, triangulate

EXIT_OK, EXIT_SCHEMA, EXIT_DEGENERATE = 0, 2, 3

ESTIMATE_COLUMNS = ("point_id", "x", "y", "z", "cov_xx", "cov_xy", "cov_xz", "cov_yy",
                    "cov_yz", "cov_zz", "residual_cost", "method")


def triangulate_scene(scene: Scene, method="lostu", diagonal=False
                      ) -> Tuple[List[Tuple[int, PointEstimate]], List[Tuple[int, str]]]:
    """Triangulate every track; returns ``(estimates, failures)`` keyed by point id."""
    method = Method(method)
    kw = {"diagonal": True} if diagonal else {}
    done, failed = [], []
    for t in scene.tracks:
        try:
            done.append((t.point_id, triangulate(t, scene.track_views(t), method, **kw)))
        except (TriangulationError, ValueError) as e:
            failed.append((t.point_id, f"{type(e).__name__}: {e}"))
    return done, failed


def estimates_to_csv(estimates: Sequence[Tuple[int, PointEstimate]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ESTIMATE_COLUMNS)
    for pid, est in estimates:
        C = est.covariance
        w.writerow([pid, *(repr(float(x)) for x in est.position),
                    *(repr(float(C[i, j])) for i, j in ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))),
                    repr(float(est.residual_cost)), est.method.value])
    return buf.getvalue()


def _write(text, path):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)


def _cmd_triangulate(args):
    if args.diag_approx and args.method != "lostu":
        print("error: --diag-approx only applies to --method lostu", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        scene = load_scene(args.scene)
    except (SchemaError, OSError) as e:
        print(f"error: {args.scene}: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    done, failed = triangulate_scene(scene, args.method, args.diag_approx)
    for pid, msg in failed:
        print(f"track {pid}: skipped ({msg})", file=sys.stderr)
    _write(estimates_to_csv(done), args.out)
    if scene.tracks and not done:
        print("error: every track is degenerate", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def _load_config(kind, path, seed, trials):
    cls = TwoViewConfig if kind == "two-view" else NViewConfig
    fields = {}
    if path:
        with open(path, encoding="utf-8") as f:
            fields = json.load(f)
        if not isinstance(fields, dict):
            raise SchemaError("config must be a JSON object")
        unknown = set(fields) - set(cls.__dataclass_fields__)
        if unknown:
            raise SchemaError(f"unknown config field(s) {sorted(unknown)}")
    if seed is not None:
        fields["seed"] = seed
    if trials is not None:
        fields["trials"] = trials
    return cls(**fields)


def _cmd_bench(args):
    try:
        cfg = _load_config(args.kind, args.config, args.seed, args.trials)
        grid = [float(x) for x in args.grid.split(",")] if args.grid else None
    except (SchemaError, OSError, TypeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    run = run_two_view_study if args.kind == "two-view" else run_n_view_study
    try:
        reports = run(cfg, args.sweep, grid, threads=args.threads, timing=args.timing)
    except UnknownSweep as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    _write(reports_to_csv(reports), args.out)
    if args.json:
        _write(reports_to_json(reports) + "\n", args.json)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="lostu", description="Uncertainty-aware triangulation")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("triangulate", help="triangulate every track of a scene file")
    t.add_argument("--scene", required=True, help="scene JSON file")
    t.add_argument("--method", default="lostu", choices=[m.value for m in Method])
    t.add_argument("--out", help="output CSV (default: stdout)")
    t.add_argument("--diag-approx", action="store_true",
                   help="invert only the diagonal of each residual covariance (lostu)")
    t.set_defaults(func=_cmd_triangulate)

    b = sub.add_parser("bench", help="run a Monte-Carlo study")
    b.add_argument("kind", choices=["two-view", "n-view"])
    b.add_argument("--config", help="JSON object overriding configuration fields")
    b.add_argument("--sweep", help="parameter to sweep (default: nominal configuration only)")
    b.add_argument("--grid", help="comma-separated sweep values overriding the defaults")
    b.add_argument("--seed", type=int)
    b.add_argument("--trials", type=int)
    b.add_argument("--out", help="output CSV (default: stdout)")
    b.add_argument("--json", help="also write a JSON report with the full configuration")
    b.add_argument("--timing", action="store_true",
                   help="measure per-method runtime (makes the output machine-dependent)")
    b.add_argument("--threads", type=int,
                   help="worker processes (default: TRI_BENCH_THREADS or the CPU count)")
    b.set_defaults(func=_cmd_bench)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
