"""Sampling-hardness indicators over random circuit ensembles.

For each register width, aggregates the anti-concentration fraction (which
should sit near 1/e for a chaotic spectrum), the total-variation distance
of the output spectrum to the Porter-Thomas density (which should shrink
with width), and the cross-entropy difference (near 1 for an ideal
sampler). Also prints one t-sparseness curve to show its downward
log-log curvature.
"""

import argparse
import math

import numpy as np

from iqpforge.circuits import CircuitFamily
from iqpforge.diagnostics import ensemble_study, run_trial


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--family", default=CircuitFamily.EXTENDED_IQP,
                        choices=CircuitFamily.ALL)
    parser.add_argument("--ns", type=int, nargs="+", default=[8, 10, 12, 14])
    parser.add_argument("--trials", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    report = ensemble_study(args.family, args.ns, args.trials, args.seed,
                            xeb_shots=500)
    print(f"{args.family}, {args.trials} instances per width "
          f"(1/e = {1 / math.e:.4f}):")
    print(f"{'n':>4} {'anti-conc':>12} {'TV to PT':>12} {'delta H':>16}")
    for e in report.entries:
        print(f"{e.n:>4} {e.anti_concentration_mean:>7.4f} "
              f"+-{e.anti_concentration_std:.4f} "
              f"{e.tv_mean:>7.4f} +-{e.tv_std:.4f} "
              f"{e.delta_h:>9.4f} +-{e.delta_h_stderr:.4f}")

    n = args.ns[-1]
    curve = run_trial(args.family, n, args.seed, 0, xeb_shots=10).tsparse_curve
    log_f = np.log([f for _, f in curve])
    frac = np.mean(np.diff(log_f, 2) < 0)
    print(f"\nt-sparseness, one instance at n={n} "
          f"(f = kept fraction of outcomes):")
    for inv_eps, f in curve:
        print(f"  1/eps {inv_eps:8.2f}   f {f:.4f}")
    print(f"negative log-log second difference at {frac:.0%} "
          f"of interior points")


if __name__ == "__main__":
    main()
