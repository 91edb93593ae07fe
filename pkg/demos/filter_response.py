"""Print the preprocessing filter response at a few frequencies of interest.

    python demos/filter_response.py --fs 1000
"""

import argparse

import numpy as np

from viseme_decode.dsp import cascade, design_butter_bandpass, design_notch, line_harmonics


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fs", type=float, default=1000.0)
    ap.add_argument("--lo", type=float, default=30.0)
    ap.add_argument("--hi", type=float, default=499.0)
    ap.add_argument("--order", type=int, default=5)
    args = ap.parse_args()

    bp = design_butter_bandpass(args.order, args.lo, args.hi, args.fs)
    notches = [design_notch(f, 30.0, args.fs) for f in line_harmonics(args.fs, args.hi)]
    chain = cascade(bp, *notches)
    freqs = np.array([5, args.lo, 45, 60, 90, 120, 200, 300, 480, args.hi])
    gain = np.abs(chain.response(freqs))
    print(f"bandpass order {args.order}, {args.lo}-{args.hi} Hz, notches at {line_harmonics(args.fs, args.hi)}")
    for f, g in zip(freqs, gain):
        print(f"{f:8.1f} Hz  {20 * np.log10(max(g, 1e-300)):9.2f} dB")


if __name__ == "__main__":
    main()
