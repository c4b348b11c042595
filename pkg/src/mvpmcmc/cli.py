"""Command line front end.

    mvpmcmc simulate  --config cfg.json --out dir
    mvpmcmc run       --config cfg.json --seed 7 --workers 4 --out dir
    mvpmcmc benchmark --config cfg.json --out dir
    mvpmcmc diagnose  --out dir          (a directory written by ``run``)

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 degeneracy.
Failures print a JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness
from .errors import ConfigError, MVError


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvpmcmc", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("simulate", "run", "benchmark", "diagnose"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "diagnose", help="experiment JSON")
        p.add_argument("--seed", type=int, default=None, help="root seed (u64)")
        p.add_argument("--workers", type=int, default=None, help="worker processes")
        p.add_argument("--out", default=None, help="output directory")
    return ap


def _dispatch(args) -> dict:
    if args.command == "diagnose":
        run_dir = args.out
        if run_dir is None and args.config:
            run_dir = harness.ExperimentConfig.load(args.config).out
        if run_dir is None:
            raise ConfigError("diagnose needs --out pointing at a run directory")
        return {"diagnostics": harness.diagnose(run_dir)}
    cfg = harness.ExperimentConfig.load(args.config)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if args.workers is not None and args.workers < 1:
        raise ConfigError("--workers must be positive")
    if args.command == "simulate":
        data = harness.simulate(cfg, args.out, args.seed)
        return {"T": data.T, "d_y": data.d_y}
    if args.command == "run":
        s = harness.run_experiment(cfg, args.out, args.seed, args.workers)
        return {"estimates": {k: v["value"] for k, v in s["estimates"].items()},
                "acceptance": s["acceptance"]}
    res = harness.benchmark_cost_mse(cfg, args.out, args.seed, args.workers)
    return {"fits": res["fits"]}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        result = _dispatch(args)
    except MVError as exc:
        print(json.dumps(exc.record()), file=sys.stderr)
        return exc.exit_code
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
