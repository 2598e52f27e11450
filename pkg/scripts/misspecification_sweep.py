"""Tightness surrogate for the two-state filter under AR(1) data of varying persistence.

    python scripts/misspecification_sweep.py --phis 0.0 0.5 0.8 0.95 --n-max 2000
"""

import argparse

from smcstab.functions import indicator
from smcstab.models import Ar1Source, DiscreteHmm
from smcstab.stability import variance_sequence_experiment


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--phis", type=float, nargs="+", default=[0.0, 0.5, 0.8, 0.95])
    parser.add_argument("--n-max", type=int, default=2000)
    parser.add_argument("--particles", type=int, default=1000)
    parser.add_argument("--replicates", type=int, default=200)
    parser.add_argument("--seed", type=int, default=6)
    args = parser.parse_args()
    model = DiscreteHmm(q=[[0.9, 0.1], [0.2, 0.8]], g=[[0.8, 0.2], [0.3, 0.7]], chi=[2 / 3, 1 / 3])
    print("phi,slope,ci_low,ci_high,half_ratio,pass")
    for phi in args.phis:
        rep = variance_sequence_experiment(
            model, Ar1Source(phi, thresholds=(0.0,), seed=17), args.particles, args.replicates, args.n_max, indicator(0), args.seed
        )
        t = rep.trend
        print(f"{phi:g},{t.slope:.3e},{t.ci[0]:.3e},{t.ci[1]:.3e},{t.ratio:.3f},{t.passed}")


if __name__ == "__main__":
    main()
