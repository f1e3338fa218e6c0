"""Layered-bridge marginal against fine-grid bridges weighted by their layer probability.

    python scripts/layer_check.py --layer 2 --draws 20000 --grid-paths 20000
"""

import argparse

import numpy as np

from exactdiff.brownian_bridge import BridgeSpec
from exactdiff.layered_bridge import LayerIndex, LayerSpec, accept_layer_path, layer_distribution, propose_layer_path
from exactdiff.rng import CountingRNG
from exactdiff.validation import effective_size, layer_bruteforce, weighted_ks


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--y", type=float, default=0.3)
    ap.add_argument("--z", type=float, default=0.5)
    ap.add_argument("--T", type=float, default=0.1)
    ap.add_argument("--t", type=float, default=0.05)
    ap.add_argument("--layer", type=int, default=2)
    ap.add_argument("--draws", type=int, default=20_000)
    ap.add_argument("--grid-paths", type=int, default=20_000)
    ap.add_argument("--steps", type=int, default=2 ** 14)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    br = BridgeSpec(args.y, args.z, args.T)
    lay = LayerSpec.for_bridge(br, 0.0, 1.0)
    probs, inside = layer_distribution(br, lay, 0.0, 1.0)
    print("P(stay in (0,1)) =", inside)
    print("layer probabilities:", np.round(probs[:6], 5))

    rng = CountingRNG(args.seed)
    vals, tries = [], 0
    while len(vals) < args.draws:
        tries += 1
        path = propose_layer_path(br, lay, LayerIndex(args.layer), [args.t], rng)
        if accept_layer_path(path, LayerIndex(args.layer), lay, rng):
            vals.append(path.value_at(args.t))
    ref, w = layer_bruteforce(br, lay, args.layer, args.t, args.grid_paths,
                              np.random.default_rng([args.seed, 1]), steps=args.steps)
    n_eff = effective_size(w)
    ks = weighted_ks(np.array(vals), ref, w)
    crit = 1.36 * np.sqrt(1 / len(vals) + 1 / n_eff)
    print(f"proposal acceptance {args.draws / tries:.3f}")
    print(f"weighted KS {ks:.5f} (5% critical value about {crit:.5f}, effective grid sample {n_eff:.0f})")


if __name__ == "__main__":
    main()
