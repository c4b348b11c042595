#!/usr/bin/env python3
"""Full 3D neuron inference run followed by chain diagnostics (offline, hours).

    python scripts/run_neuron_benchmark.py --out runs/neuron --workers 4
"""

import argparse
import json
from pathlib import Path

from mvpmcmc.harness import ExperimentConfig, diagnose, run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "neuron3d_full.json"))
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/neuron3d")
    args = ap.parse_args()

    cfg = ExperimentConfig.load(args.config)
    summary = run_experiment(cfg, args.out, seed=args.seed, workers=args.workers)
    diag = diagnose(args.out)
    for name, est in summary["estimates"].items():
        print(f"{name:<8} {est['value']: .5f}  (base {est['base_term']: .5f})")
    for level, d in diag.items():
        print(f"level {level}: acceptance {d['acceptance']:.2f}")
    print(json.dumps({"out": args.out, "cost": summary["cost"]}))


if __name__ == "__main__":
    main()
