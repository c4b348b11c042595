#!/usr/bin/env python3
"""Desk-scale cost/MSE sweep on the mean-field OU model.

    python scripts/ou_desk_benchmark.py --out runs/desk
"""

import argparse
import json
from pathlib import Path

from mvpmcmc.harness import ExperimentConfig, benchmark_cost_mse

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "ou_desk_benchmark.json"))
    ap.add_argument("--seed", type=int, default=20261019)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/ou_desk")
    args = ap.parse_args()

    cfg = ExperimentConfig.load(args.config)
    res = benchmark_cost_mse(cfg, args.out, seed=args.seed, workers=args.workers)
    print(f"{'algorithm':<10} {'epsilon':>9} {'cost':>12} {'mse':>11}")
    for p in res["points"]:
        print(f"{p.algorithm:<10} {p.epsilon:>9.5f} {p.cost:>12.4g} {p.mse:>11.3e}")
    for alg, fit in res["fits"].items():
        # rate: log cost per unit log mse along the fitted line
        print(f"{alg}: slope {fit['slope']:.3f}  rate {fit['rate']:.3f}  r2 {fit['r2']:.3f}")
    print(json.dumps({"out": args.out}))


if __name__ == "__main__":
    main()
