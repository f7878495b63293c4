"""Herbie's tooth: LIGP vs a dense GP on a unique-input subset, over several seeds.

Usage::

    python scripts/herbie_benchmark.py --seeds 0 1 2 --nbar 100 --m 10
"""

import argparse
from dataclasses import replace

import numpy as np

from ligp.bench import BenchmarkSpec, run_benchmark
from ligp.model import LigpConfig


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--n-unique", type=int, default=2000)
    parser.add_argument("--a", type=int, default=10)
    parser.add_argument("--nbar", type=int, default=100)
    parser.add_argument("--m", type=int, default=None)
    parser.add_argument("--dense-subset", type=int, default=1000)
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args(argv)

    cfg = LigpConfig(nbar=args.nbar, m=args.m, workers=args.workers)
    print("seed  ligp_rmse  dense_rmse  score_est  score_pinned  seconds")
    rows = []
    for s in args.seeds:
        spec = BenchmarkSpec("herbie", n_unique=args.n_unique, a=args.a, seed=s)
        est = run_benchmark(spec, cfg, dense_subset=args.dense_subset)
        pinned = run_benchmark(spec, replace(cfg, estimate_nugget=False))
        row = (est["metrics"].rmse, est["dense_metrics"].rmse, est["metrics"].score,
               pinned["metrics"].score, est["metrics"].wall_time)
        rows.append(row)
        print(f"{s:4d}  {row[0]:9.5f}  {row[1]:10.5f}  {row[2]:9.1f}  {row[3]:12.1f}  "
              f"{row[4]:7.1f}", flush=True)
    med = np.median(np.array(rows), axis=0)
    print(f"median RMSE ratio {med[0] / med[1]:.3f}; median scores {med[2]:.1f} vs {med[3]:.1f}")


if __name__ == "__main__":
    main()
