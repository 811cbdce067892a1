#!/usr/bin/env python3
"""Print the magnitude response of the preprocessing low-pass filter.

Tabulates |H(f)| for the single-pass design and its zero-phase square at a
few landmark frequencies plus an even grid, so filter changes can be eyeballed
without a plotting stack.  Useful when tuning --filter butter:N:HZ choices.
"""

import argparse
import math
import sys

from trajid.dsp import FilterSpec, design_butterworth, evaluate_response


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--order", type=int, default=4)
    parser.add_argument("--cutoff", type=float, default=7.0)
    parser.add_argument("--fs", type=float, default=250.0)
    parser.add_argument("--points", type=int, default=12,
                        help="grid rows between 0 and Nyquist")
    args = parser.parse_args(argv)

    spec = FilterSpec(order=args.order, cutoff_hz=args.cutoff, fs_hz=args.fs)
    chain = design_butterworth(spec)
    nyquist = args.fs / 2.0

    landmarks = sorted({0.0, args.cutoff, 2.0 * args.cutoff, nyquist})
    grid = [i * nyquist / (args.points - 1) for i in range(args.points)]
    freqs = sorted(set(landmarks) | set(grid))

    print(f"butterworth order={args.order} cutoff={args.cutoff} Hz fs={args.fs} Hz")
    print(f"{'freq_hz':>10}  {'|H|':>12}  {'|H|^2 (zero-phase)':>20}  {'dB':>8}")
    for f in freqs:
        mag = abs(evaluate_response(chain, f, args.fs))
        db = 20.0 * math.log10(mag) if mag > 0 else float("-inf")
        tag = "  <- cutoff" if f == args.cutoff else ""
        print(f"{f:>10.3f}  {mag:>12.6f}  {mag ** 2:>20.6f}  {db:>8.2f}{tag}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
