"""Time the compiled and numpy kernels on the study workloads.

    python benchmarks/compare_backends.py [--views 2 10 50 200] [--trials 500]

Prints microseconds per triangulation for each backend and the speed-up.
"""

import argparse

import numpy as np

from lostu import kernels
from lostu.bench.scenes import NViewConfig, TwoViewConfig
from lostu.bench.study import _make_batch, measure_runtime

METHODS = ("midpoint", "dlt", "lost", "lostu", "lostu_diag")


def workload(m, trials):
    cfg = TwoViewConfig() if m == 2 else NViewConfig(m=m)
    return _make_batch(cfg, np.arange(trials))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--views", type=int, nargs="+", default=[2, 10, 50, 200])
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--min-calls", type=int, default=5000)
    args = p.parse_args(argv)

    if not kernels.compiled_available():
        raise SystemExit("compiled extension not built; run `pip install -e .` first")

    print(f"{'views':>5}  {'method':<11}{'cython us':>11}{'numpy us':>11}{'speed-up':>10}")
    for m in args.views:
        b = workload(m, args.trials)
        for meth in METHODS:
            t = {name: min(measure_runtime(meth, b, min_calls=args.min_calls, backend=name)
                           for _ in range(3))
                 for name in ("cython", "python")}
            print(f"{m:>5}  {meth:<11}{t['cython']:>11.3f}{t['python']:>11.3f}"
                  f"{t['python'] / t['cython']:>9.1f}x")


if __name__ == "__main__":
    main()
