"""Exact predictor and filter variance along a simulated record.

    python scripts/variance_profile.py --n 300 --seed 11 > profile.csv
"""

import argparse
import sys

import numpy as np

from smcstab.exact import variance_series_discrete
from smcstab.io import variance_series_rows, write_series_csv
from smcstab.models import DiscreteHmm, simulate_hmm


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--n", type=int, default=300)
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--out", default="/dev/stdout")
    args = parser.parse_args()
    model = DiscreteHmm(q=[[0.9, 0.1], [0.2, 0.8]], g=[[0.8, 0.2], [0.3, 0.7]], chi=[2 / 3, 1 / 3])
    y = simulate_hmm(model, args.n, args.seed).observations
    vs = variance_series_discrete(model, y, np.array([1.0, 0.0]), "indicator(0)")
    schema, rows = variance_series_rows(vs)
    write_series_csv(args.out, rows, schema)
    print(f"sigma2: min {vs.sigma2.min():.4f} median {np.median(vs.sigma2):.4f} max {vs.sigma2.max():.4f}", file=sys.stderr)


if __name__ == "__main__":
    main()
