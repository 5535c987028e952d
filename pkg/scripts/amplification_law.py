#!/usr/bin/env python3
"""Monte-Carlo check of the XOR privacy-amplification law over several rounds.

Usage:
    python scripts/amplification_law.py [--pairs 100000] [--rounds 4]
"""

import argparse

import numpy as np

from hybridkey.privacy_amp import (
    disagreement_after_xor,
    eve_knowledge_after_xor,
    simulate_disagreement,
    simulate_eve_xor,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--pairs", type=int, default=100_000)
    ap.add_argument("--rounds", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    print("Eve's guess probability p per round (model / simulated)")
    for p0 in (0.6, 0.75, 0.9):
        p, cells = p0, [f"{p0:.3f}"]
        for _ in range(args.rounds):
            sim = simulate_eve_xor(p, args.pairs, rng)
            p = eve_knowledge_after_xor(p)
            cells.append(f"{p:.4f}/{sim:.4f}")
        print("  ".join(cells))

    print("\nparties' disagreement eps per round (model / simulated)")
    for e0 in (0.01, 0.1):
        e, cells = e0, [f"{e0:.3f}"]
        for _ in range(args.rounds):
            sim = simulate_disagreement(e, args.pairs, rng)
            e = disagreement_after_xor(e)
            cells.append(f"{e:.4f}/{sim:.4f}")
        print("  ".join(cells))


if __name__ == "__main__":
    main()
