#!/usr/bin/env python3
"""How far int8-everywhere and the mixed plan drift from the float model, per seed.

Random weights, noise input, calibration on a separate noise clip. Reports the relative
RMS deviation from the f32 output and the SNR of each quantized output against it.
"""

import argparse
import json

from streamse.verify import precision_divergence


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--seconds", type=float, default=2.0)
    args = ap.parse_args()
    wins = 0
    for s in range(args.seeds):
        r = precision_divergence(s, args.seconds)
        wins += r["int8_rel_rms"] > r["mixed_rel_rms"]
        print(json.dumps(r))
    print(json.dumps({"int8_worse_than_mixed": wins, "seeds": args.seeds}))


if __name__ == "__main__":
    main()
