#!/usr/bin/env python3
"""KLJN bit disagreement and Eve's accuracy as samples per period grow.

Usage:
    python scripts/error_rate_sweep.py [--samples 100 1000 10000 100000] [--periods 2000] [--seeds 5]
"""

import argparse

import numpy as np

from hybridkey.kljn_sim import KljnConfig, eve_best_guess, run_exchange


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--samples", type=int, nargs="+", default=[100, 1000, 10_000, 100_000])
    ap.add_argument("--periods", type=int, default=2000)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--r-low", type=float, default=1.0)
    ap.add_argument("--r-high", type=float, default=9.0)
    args = ap.parse_args()

    print(f"{'samples':>9} {'secure_bits':>12} {'errors':>7} {'error_rate':>11} {'eve_acc':>8}")
    for samples in args.samples:
        bits = errs = eve_hits = 0
        for seed in range(args.seeds):
            cfg = KljnConfig(r_low=args.r_low, r_high=args.r_high, samples_per_period=samples,
                             periods=args.periods, seed=seed)
            raw = run_exchange(cfg)
            n = len(raw.alice_key)
            guesses, acc = eve_best_guess(raw.eve_observations, raw.periods)
            bits += n
            errs += int(np.sum(raw.alice_key.bits != raw.bob_key.bits))
            eve_hits += round(acc * n)
        print(f"{samples:>9} {bits:>12} {errs:>7} {errs / bits:>11.3g} {eve_hits / bits:>8.4f}")


if __name__ == "__main__":
    main()
