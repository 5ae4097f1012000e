"""Finite-epsilon behaviour of the fluctuations for one measure.

For each epsilon, n0 is scaled so that n0 / v(epsilon) stays fixed, and the
mean, variance, robust (IQR) scale and KS p-value of X_eps(1) are printed
for the v- and w-normalisations.  Usage:

    python scripts/epsilon_sweep.py --measure configs/beta11.json --eps 1e-2 1e-3 1e-4
"""
from __future__ import annotations

import argparse
import math

import numpy as np
from scipy import stats

from kingmix.experiments import N0_GUARD_RATIO, entrance_time, normalizing_speeds, simulate_counts
from kingmix.measure import load_measure
from kingmix.rates import RateFunctional
from kingmix.speed import SpeedFunction, Variant


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--measure", required=True)
    ap.add_argument("--eps", type=float, nargs="+", default=[1e-2, 1e-3, 1e-4])
    ap.add_argument("--replicates", type=int, default=2000)
    ap.add_argument("--margin", type=float, default=25.0)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    m = load_measure(args.measure)
    rf = RateFunctional(m)
    sf = SpeedFunction(rf, Variant.V)
    sd = math.sqrt(m.c / 6.0)
    print(f"{'eps':>7} {'norm':>4} {'n0':>9} {'mean':>8} {'var':>8} {'iqr_sd':>8} {'ks_p':>9} {'offset':>8}")
    for eps in args.eps:
        n0 = int(max(args.margin, N0_GUARD_RATIO) * sf(eps))
        counts = simulate_counts(rf, n0, [eps], args.replicates, args.seed, args.threads,
                                 entrance_time(rf, n0))[:, 0]
        for norm in ("v", "w"):
            speed = normalizing_speeds(rf, norm, [eps])[0]
            x = (counts / speed - 1.0) / math.sqrt(eps)
            q1, q3 = np.percentile(x, [25, 75])
            p = stats.kstest(x, "norm", args=(0.0, sd)).pvalue
            offset = (sf(eps) / speed - 1.0) / math.sqrt(eps)
            print(f"{eps:7.0e} {norm:>4} {n0:9d} {x.mean():8.4f} {x.var(ddof=1):8.4f} "
                  f"{(q3 - q1) / 1.349:8.4f} {p:9.2e} {offset:8.4f}", flush=True)
    print(f"limit: mean 0, var {m.c / 6:.4f}, sd {sd:.4f}")


if __name__ == "__main__":
    main()
