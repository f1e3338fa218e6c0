"""Heavy tail of the EA2 Poisson count on the growth bridge with a positive minimum.

For each start y this draws candidate minima only, and reads off the mean
Poisson count r(m) T each candidate would need.  No thinning is done, so a
few hundred thousand candidates take seconds.  The tail P(count > n) falls
like n^(-1/2), so the mean is infinite and any finite per-path cap decides
what a cost table reports.

    python scripts/ea2_tail.py --candidates 200000 --cap 1000000
"""

import argparse

import numpy as np

from exactdiff.brownian_bridge import BridgeSpec, sample_min
from exactdiff.rng import CountingRNG
from exactdiff.sde_model import BROWNIAN, GrowthModelParams, growth_model_spec


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--kappa", type=float, default=1.0)
    ap.add_argument("--z", type=float, default=1.0)
    ap.add_argument("--T", type=float, default=0.15)
    ap.add_argument("--candidates", type=int, default=200_000)
    ap.add_argument("--cap", type=float, default=1e6, help="variates allowed per path")
    ap.add_argument("--paths", type=int, default=10_000, help="paths per cost-table cell")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    spec = growth_model_spec(GrowthModelParams(args.kappa, 3.0, 1.0), BROWNIAN)
    print(f"{'y':>6} {'median':>9} {'q99':>10} {'q99.99':>11} {'P(>cap/2)':>10} {'cells hit':>9}")
    for y in (0.5, 0.25, 0.15, 0.1):
        rng = CountingRNG(args.seed, int(y * 1000))
        br = BridgeSpec(y, args.z, args.T)
        mean_n = np.array([spec.sup_phi(sample_min(br, rng, lower=0.0).m, np.inf) * args.T
                           for _ in range(args.candidates)])
        # two variates per mark, so the cap is reached near cap / 2 marks
        p_hit = float(np.mean(mean_n > args.cap / 2))
        q = np.quantile(mean_n, [0.5, 0.99, 0.9999])
        print(f"{y:6g} {q[0]:9.3g} {q[1]:10.3g} {q[2]:11.3g} {p_hit:10.2e} {p_hit * args.paths:9.2f}")


if __name__ == "__main__":
    main()
