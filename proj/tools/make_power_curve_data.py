#!/usr/bin/env python3
"""Writes fixtures/power_curve_train.csv from a known logistic power curve.

Ground truth: power = 100 / (1 + exp(-(v - (A + B*S)) / W)) with A = 7 m/s,
B = 1.5 m/s per unit shear and W = 1 m/s, plus N(0, 0.5^2) noise, clipped to
[0, 100]. Hub speeds are uniform on [0, 20] m/s and shear on [0, 0.4], so the
sample spans cut-in (about 3 m/s) through rated (about 11 m/s).
"""

import argparse
import csv
import math
import random

A, B, W = 7.0, 1.5, 1.0
NOISE_SD = 0.5


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="fixtures/power_curve_train.csv")
    ap.add_argument("--rows", type=int, default=500)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["speed_mps", "shear", "power"])
        for _ in range(args.rows):
            v = rng.uniform(0.0, 20.0)
            s = rng.uniform(0.0, 0.4)
            p = 100.0 / (1.0 + math.exp(-(v - (A + B * s)) / W)) + rng.gauss(0.0, NOISE_SD)
            w.writerow([f"{v:.4f}", f"{s:.4f}", f"{min(100.0, max(0.0, p)):.4f}"])


if __name__ == "__main__":
    main()
