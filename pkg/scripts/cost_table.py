"""Print mean per-path costs for every cell of a sweep config.

    python scripts/cost_table.py scripts/configs/bessel_ea1_costs.toml --paths 2000
"""

import argparse
import math
import time

from exactdiff.bench_cli import bench_cell, load_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--paths", type=int, default=None, help="override n_paths")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    cfg = load_config(args.config, args.seed)
    if args.paths is not None:
        cfg.n_paths = args.paths
    head = f"{'kappa':>6} {'y':>7} {'attempts':>10} {'poisson':>10} {'skeleton':>10} {'rvs':>10} {'secs':>8}"
    print(f"{cfg.algorithm} on {cfg.model}, {cfg.n_paths} paths per cell")
    print(head)
    for idx, cell in enumerate(cfg.cells()):
        t0 = time.perf_counter()
        s = bench_cell(cell, idx, args.jobs)
        cols = [s.attempts, s.poisson_points, s.skeleton_points, s.random_variables]
        txt = " ".join("--".rjust(10) if math.isnan(v) else f"{v:10.3f}" for v in cols)
        print(f"{cell.kappa:6g} {cell.y0:7g} {txt} {time.perf_counter() - t0:8.1f}", flush=True)


if __name__ == "__main__":
    main()
