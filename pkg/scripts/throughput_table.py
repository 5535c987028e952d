#!/usr/bin/env python3
"""Physical-only versus hybrid delivery times over a grid of link rates.

The HBK consumed is measured from a real budget-mode session, so the
pad-accounted row reflects what the expansion actually spent.

Usage:
    python scripts/throughput_table.py [--physical-rates 10 100 1000] [--software-rate 1e6]
"""

import argparse

from hybridkey.analysis import throughput_report
from hybridkey.dhm_expand import DhmParams
from hybridkey.session import party_pair, run_session, uniform_key


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--physical-rates", type=float, nargs="+", default=[10, 100, 1000])
    ap.add_argument("--software-rate", type=float, default=1e6)
    ap.add_argument("--hbk-bits", type=int, default=8192)
    ap.add_argument("--prime-bits", type=int, default=256)
    ap.add_argument("--k", type=int, default=128)
    args = ap.parse_args()

    params = DhmParams(args.prime_bits, args.k, args.hbk_bits // (4 * args.prime_bits))
    alice, _, _ = run_session(*party_pair(params, 0, injected_key=uniform_key(args.hbk_bits, 0)))
    soft = alice.soft_key
    print(f"session: {soft.rounds_completed} rounds, SBK {soft.length} bits, HBK consumed {soft.hbk_consumed}")
    cost_per_bit = soft.hbk_consumed / soft.length
    # second block: the nominal 8x expansion, with pad use scaled at the measured cost per SBK bit
    for m in (soft.length, 8 * args.hbk_bits):
        for rate in args.physical_rates:
            rep = throughput_report(args.hbk_bits, m, round(m * cost_per_bit), rate, args.software_rate)
            print()
            print(rep.to_table(), end="")


if __name__ == "__main__":
    main()
