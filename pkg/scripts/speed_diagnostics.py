"""Deterministic diagnostics: speed ratios, A estimates and v/v* gaps.

Prints one table per measure in configs/ (the measure files, not experiment
configs).  Usage: python scripts/speed_diagnostics.py
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from kingmix.experiments import sharpness_constants
from kingmix.measure import load_measure
from kingmix.rates import RateFunctional
from kingmix.speed import SpeedFunction, Variant

ROOT = Path(__file__).resolve().parents[1]
MEASURE_FILES = ["kingman.json", "atom06.json", "beta11.json", "beta_critical.json"]
TIMES = 10.0 ** np.arange(-1, -8, -1)


def main():
    for name in MEASURE_FILES:
        m = load_measure(ROOT / "configs" / name)
        rf = RateFunctional(m)
        sf = SpeedFunction(rf, Variant.V)
        print(f"# {name}  c={m.c:g}  int y^-1/2 dLambda_1={m.sqrt_y_moment():.6g}")
        print(f"{'t':>8} {'v_t':>14} {'ratio':>10} {'gap/t':>8}")
        for t in TIMES:
            print(f"{t:8.0e} {sf(t):14.6f} {sf.drift_ratio(t):10.5f} {sf.v_vstar_gap(t) / t:8.4f}")
        if m.c < 1.0:
            k = sharpness_constants(rf)
            print(f"A (rates) {k['A_rates']:.6f}  A (speed) {k['A_speed']:.6f}  "
                  f"drift constant {k['drift_constant']:.6f}")
        print()


if __name__ == "__main__":
    main()
