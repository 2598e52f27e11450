"""Scaled L^p errors of the predictor for several particle counts and moment orders.

    python scripts/lp_convergence.py --replicates 1000
"""

import argparse

from smcstab.functions import indicator
from smcstab.models import DiscreteHmm
from smcstab.stability import lp_error_experiment


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--replicates", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=4)
    args = parser.parse_args()
    model = DiscreteHmm(q=[[0.9, 0.1], [0.2, 0.8]], g=[[0.8, 0.2], [0.3, 0.7]], chi=[2 / 3, 1 / 3])
    y = [0, 1, 0, 0, 1]
    print("p,N,value,reference,relative_gap")
    for p in (1.0, 1.5, 2.0, 3.0):
        rep = lp_error_experiment(model, y, 5, p, [100, 1000, 10_000], args.replicates, args.seed, indicator(0))
        for n, v, g in zip(rep.n_grid, rep.values, rep.relative_gaps):
            print(f"{p:g},{n},{v:.6f},{rep.reference:.6f},{g:.4f}")


if __name__ == "__main__":
    main()
