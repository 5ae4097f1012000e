"""Run the experiment configs in configs/ and save JSON + text reports.

Usage: python scripts/run_experiments.py [config ...] [--out results] [--threads N]
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

from kingmix.experiments import run_config

ROOT = Path(__file__).resolve().parents[1]
DEFAULT = ["kingman_fclt.json", "atom_fclt.json", "beta_fclt.json", "sharpness.json", "oracle.json"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("configs", nargs="*", default=DEFAULT)
    ap.add_argument("--out", default=str(ROOT / "results"))
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.configs:
        path = Path(name) if Path(name).exists() else ROOT / "configs" / name
        report = run_config(json.loads(path.read_text()), threads=args.threads)
        stem = path.stem
        (out / f"{stem}.json").write_text(report.to_json() + "\n")
        (out / f"{stem}.txt").write_text(report.to_text() + "\n")
        print(report.to_text(), end="\n\n", flush=True)


if __name__ == "__main__":
    main()
