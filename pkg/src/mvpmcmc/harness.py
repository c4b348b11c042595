"""Experiment orchestration: data synthesis, runs, cost-MSE sweeps, exports.

Every random quantity hangs off ``StreamKey(seed)``; tasks handed to worker
processes carry plain dicts and rebuild models from the registry, so output
bytes do not depend on ``workers``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Dataset, ModelSpec, functionals_for
from .errors import ConfigError, DomainError, InsufficientPoints
from .laws import inert_laws, sample_transition_path, simulate_tagged
from .mcmc import Chain, ProposalConfig
from .models import grid_posterior, make_model
from .multilevel import (LevelPlan, allocate_levels, correction_terms, cost_of_plan, level_configs,
                         ml_estimates, run_level, running_increment, single_level_plan)
from .rng import StreamKey

ALGORITHMS = ("pmcmc", "mlpmcmc")


@dataclass
class ExperimentConfig:
    """JSON-backed run description; unknown keys are rejected."""

    model: str = "ou-meanfield"
    params: dict = field(default_factory=dict)
    free: Optional[list] = None
    priors: Optional[dict] = None
    truth: Optional[dict] = None  # synthesis overrides on top of params
    T: int = 10
    data_path: Optional[str] = None
    data: Optional[dict] = None
    sim_level: int = 10
    sim_N: int = 10000
    algorithm: str = "mlpmcmc"
    l_star: int = 1
    L: Optional[int] = None
    N_l: object = None  # int or {level: int}
    K_l: object = None
    M: int = 50
    epsilon: Optional[float] = None
    c_K: float = 1.0
    c_N: float = 1.0
    step_scales: Optional[list] = None
    burn_in_frac: float = 0.1
    theta0: object = None  # list, "truth", or null for a prior draw
    functionals: Optional[list] = None
    interaction: str = "factored"
    resampling: str = "multinomial"
    seed: int = 0
    out: Optional[str] = None
    workers: int = 1
    benchmark: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        if self.interaction not in ("factored", "pairwise"):
            raise ConfigError("interaction must be 'factored' or 'pairwise'")
        if self.T < 1 or self.M < 1 or self.workers < 1:
            raise ConfigError("T, M and workers must be positive")
        if self.epsilon is None and self.L is None:
            raise ConfigError("give either epsilon or an explicit L with N_l and K_l")
        if self.epsilon is None and (self.N_l is None or self.K_l is None):
            raise ConfigError("explicit plans need N_l and K_l")
        if self.epsilon is not None and not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        self.build_model()

    def build_model(self) -> ModelSpec:
        return make_model(self.model, self.params, self.free, self.priors)

    def plan(self, epsilon=None, algorithm=None) -> LevelPlan:
        eps = self.epsilon if epsilon is None else epsilon
        alg = algorithm or self.algorithm
        if eps is not None:
            if alg == "pmcmc":
                return single_level_plan(eps, self.c_K, self.c_N, self.M)
            return allocate_levels(eps, self.l_star, self.c_K, self.c_N, self.M)
        lo = self.L if alg == "pmcmc" else self.l_star
        levels = range(lo, self.L + 1)
        return LevelPlan(lo, self.L, _per_level(self.N_l, levels, "N_l"),
                         _per_level(self.K_l, levels, "K_l"), self.M, None)

    def proposal(self, model: ModelSpec) -> ProposalConfig:
        scales = self.step_scales if self.step_scales is not None else [0.3] * model.d_theta
        if len(scales) != model.d_theta:
            raise ConfigError(f"step_scales needs {model.d_theta} entries")
        return ProposalConfig(tuple(scales))

    def start(self, model: ModelSpec):
        if self.theta0 is None:
            return None
        if self.theta0 == "truth":
            return tuple(model.true_theta().values)
        if len(self.theta0) != model.d_theta:
            raise ConfigError(f"theta0 needs {model.d_theta} entries")
        return tuple(float(v) for v in self.theta0)


def _per_level(spec, levels, name) -> dict:
    if isinstance(spec, (int, float)):
        return {l: int(spec) for l in levels}
    if isinstance(spec, dict):
        try:
            return {l: int(spec[str(l)] if str(l) in spec else spec[l]) for l in levels}
        except KeyError as exc:
            raise ConfigError(f"{name} missing level {exc}") from None
    raise ConfigError(f"{name} must be an integer or a level map")


# ------------------------------------------------------------- data ---

def generate_data(model: ModelSpec, theta, T: int, key: StreamKey, sim_level: int = 10,
                  sim_N: int = 10000, pairwise=False) -> Dataset:
    """One latent path driven by a large law cloud, observed at integer times."""
    p = model.bind(theta)
    s = key.derive("simulate").stream()
    obs = key.derive("observe").stream()
    kernel_free = model.zeta1 is None and model.zeta2 is None
    cloud = model.initial_cloud(p, 1 if kernel_free else sim_N, s)
    x = model.initial_cloud(p, 1, s)
    latent, ys = [], []
    for _ in range(T):
        if kernel_free:
            x, _ = sample_transition_path(model, p, x, inert_laws(model, sim_level, 1)[0], s)
        else:
            cloud, x = simulate_tagged(model, p, cloud, x, sim_level, s, pairwise)
        latent.append(x[0].copy())
        ys.append(np.asarray(model.obs_sampler(p, x, obs), dtype=float).reshape(-1))
    return Dataset(np.array(ys), np.array(latent))


def load_or_generate(cfg: ExperimentConfig, model: ModelSpec, key: StreamKey) -> Dataset:
    if cfg.data is not None:
        return Dataset.from_dict(cfg.data)
    if cfg.data_path is not None:
        with open(cfg.data_path) as fh:
            return Dataset.from_dict(json.load(fh))
    truth = model.true_theta().as_dict()
    truth.update(cfg.truth or {})
    theta = model.param(truth)
    return generate_data(model, theta, cfg.T, key.derive("data"), cfg.sim_level, cfg.sim_N,
                         cfg.interaction == "pairwise")


# ------------------------------------------------------ worker pool ---

def _chain_task(args):
    cfg_dict, data_dict, plan_dict, level, seed, path = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    model = cfg.build_model()
    data = Dataset.from_dict(data_dict)
    plan = _plan_from_dict(plan_dict)
    ccfg = _level_cfgs(cfg, model, plan)[level]
    key = StreamKey(seed, tuple(tuple(x) for x in path))
    return run_level(model, data, ccfg, key, level == plan.l_star)


def _plan_from_dict(d) -> LevelPlan:
    return LevelPlan(d["l_star"], d["L"], d["N_l"], d["K_l"], d["M"], d["epsilon"])


def _level_cfgs(cfg, model, plan):
    return level_configs(plan, cfg.proposal(model), cfg.burn_in_frac, cfg.start(model),
                         cfg.resampling, cfg.interaction == "pairwise")


def _mapper(workers: int):
    if workers <= 1:
        return None
    return ProcessPoolExecutor(max_workers=workers)


def run_chains(cfg, data, plan, key: StreamKey, pool=None) -> dict:
    tasks = [(cfg.to_dict(), data.to_dict(), plan.to_dict(), l, key.root_seed,
              [list(x) for x in key.path]) for l in plan.levels]
    results = list(pool.map(_chain_task, tasks) if pool else map(_chain_task, tasks))
    return dict(zip(plan.levels, results))


# ----------------------------------------------------------- output ---

def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    _atomic_write(path, buf.getvalue())


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path: Path, obj):
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_trace(path: Path, chain: Chain):
    header = ["iteration", *chain.names, "log_lik", "accepted"]
    rows = ([k, *chain.thetas[k], chain.log_liks[k], chain.accepted[k]] for k in range(len(chain)))
    _write_csv(path, header, rows)


def running_mean(series) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise DomainError("running mean of an empty series")
    return np.cumsum(x) / np.arange(1, x.size + 1)


def _plan_meta(plan: LevelPlan, T: int) -> dict:
    d = plan.to_dict()
    d["T"] = T
    return d


# -------------------------------------------------------- experiment ---

def run_experiment(cfg: ExperimentConfig, out_dir=None, seed=None, workers=None) -> dict:
    """Run one configured experiment and write its outputs; returns the summary."""
    t0 = time.perf_counter()
    seed = cfg.seed if seed is None else seed
    workers = cfg.workers if workers is None else workers
    out = Path(out_dir or cfg.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.build_model()
    key = StreamKey(seed)
    data = load_or_generate(cfg, model, key)
    plan = cfg.plan()
    funcs = functionals_for(model, cfg.functionals or list(model.param_names))
    pool = _mapper(workers)
    try:
        chains = run_chains(cfg, data, plan, key.derive("chains"), pool)
    finally:
        if pool:
            pool.shutdown()
    cfgs = _level_cfgs(cfg, model, plan)
    estimates = ml_estimates(model, data, plan, chains, cfgs, funcs)

    _write_json(out / "config.json", {**cfg.to_dict(), "seed": seed})
    _write_json(out / "data.json", data.to_dict())
    for l, ch in chains.items():
        write_trace(out / f"trace_l{l}.csv", ch)
    inc_levels = list(plan.levels[1:])
    header = ["level", "K_l", "N_l"]
    for f in funcs:
        header += [f"increment_{f.label}", f"ess_fine_{f.label}", f"ess_coarse_{f.label}"]
    rows = []
    for i, l in enumerate(inc_levels):
        row = [l, plan.K_l[l], plan.N_l[l]]
        for f in funcs:
            e = estimates[f.label]
            row += [e.increments[i], *e.ess[i]]
        rows.append(row)
    _write_csv(out / "increments.csv", header, rows)
    if inc_levels:
        cols, header = [], []
        for l in inc_levels:
            for f in funcs:
                terms = correction_terms(chains[l], model, data, f, cfgs[l].burn_in)
                cols.append(running_increment(*terms))
                header.append(f"l{l}_{f.label}")
        n = max(len(c) for c in cols)
        pad = [np.concatenate([c, np.full(n - len(c), np.nan)]) for c in cols]
        _write_csv(out / "running_increments.csv", ["retained_index", *header],
                   ([k, *(c[k] for c in pad)] for k in range(n)))

    summary = {
        "algorithm": cfg.algorithm,
        "model": model.name,
        "parameters": list(model.param_names),
        "seed": seed,
        "plan": _plan_meta(plan, data.T),
        "estimates": {k: v.to_dict() for k, v in estimates.items()},
        "acceptance": {str(l): ch.acceptance_rate() for l, ch in chains.items()},
        "failures": {str(l): ch.failures for l, ch in chains.items()},
        "init_draws": {str(l): ch.init_draws for l, ch in chains.items()},
        "burn_in": {str(l): cfgs[l].burn_in for l in plan.levels},
        "cost": cost_of_plan(plan, data.T),
    }
    _write_json(out / "summary.json", summary)
    _write_json(out / "timing.json", {"wall_seconds": time.perf_counter() - t0, "workers": workers})
    return summary


def simulate(cfg: ExperimentConfig, out_dir=None, seed=None) -> Dataset:
    seed = cfg.seed if seed is None else seed
    out = Path(out_dir or cfg.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.build_model()
    data = load_or_generate(cfg, model, StreamKey(seed))
    _write_json(out / "data.json", data.to_dict())
    return data


# -------------------------------------------------------- benchmark ---

@dataclass(frozen=True)
class BenchmarkPoint:
    algorithm: str
    epsilon: float
    cost: float
    mse: float
    replicates: int
    mse_by_functional: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.cost > 0 and self.mse > 0):
            raise DomainError("benchmark points need positive cost and mse")


def fit_loglog_slope(points) -> tuple[float, float, float]:
    """OLS of log mse on log cost; returns (slope, intercept, r^2)."""
    pts = np.asarray([(q.cost, q.mse) if isinstance(q, BenchmarkPoint) else tuple(q)
                      for q in points], dtype=float)
    if pts.ndim != 2 or len(np.unique(pts[:, 0])) < 2:
        raise InsufficientPoints("need at least two distinct costs")
    if np.any(pts <= 0):
        raise DomainError("costs and mse values must be positive")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_res = np.sum((y - intercept - slope * x) ** 2)
    ss_tot = np.sum((y - ym) ** 2)
    r2 = 1.0 if ss_tot == 0 else float(1.0 - ss_res / ss_tot)
    return slope, intercept, r2


def reference_values(cfg: ExperimentConfig, model: ModelSpec, data: Dataset, funcs) -> dict:
    """Ground truth for MSE: explicit values, or the exact-likelihood grid posterior."""
    ref = cfg.benchmark.get("reference", "oracle")
    if isinstance(ref, dict):
        return {f.label: float(ref[f.label]) for f in funcs}
    if ref != "oracle":
        raise ConfigError("benchmark.reference must be 'oracle' or a map of values")
    post = grid_posterior(model, data, level=None)
    missing = [f.label for f in funcs if f.label not in post]
    if missing:
        raise ConfigError(f"oracle reference only covers parameters, not {missing}")
    return {f.label: post[f.label]["mean"] for f in funcs}


def _bench_task(args):
    cfg_dict, data_dict, alg, eps, rep, seed = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    model = cfg.build_model()
    data = Dataset.from_dict(data_dict)
    plan = cfg.plan(eps, alg)
    key = StreamKey(seed).derive("bench").derive(alg).derive("eps", round(-np.log2(eps) * 1000))
    key = key.derive("rep", rep)
    chains = {l: run_level(model, data, c, key, l == plan.l_star)
              for l, c in _level_cfgs(cfg, model, plan).items()}
    funcs = functionals_for(model, cfg.functionals or list(model.param_names))
    est = ml_estimates(model, data, plan, chains, _level_cfgs(cfg, model, plan), funcs)
    return {k: v.value for k, v in est.items()}


def benchmark_cost_mse(cfg: ExperimentConfig, out_dir=None, seed=None, workers=None) -> dict:
    """Replicated runs per (algorithm, epsilon); MSE against the reference and slopes."""
    t0 = time.perf_counter()
    seed = cfg.seed if seed is None else seed
    workers = cfg.workers if workers is None else workers
    b = cfg.benchmark
    epsilons = [float(e) for e in b.get("epsilons", [2 ** -1, 2 ** -2, 2 ** -3, 2 ** -4])]
    R = int(b.get("replicates", 5))
    algs = list(b.get("algorithms", ALGORITHMS))
    if R < 3:
        raise ConfigError("benchmark needs at least 3 replicates")
    if len(set(epsilons)) < 2:
        raise InsufficientPoints("benchmark needs at least two budgets")
    model = cfg.build_model()
    data = load_or_generate(cfg, model, StreamKey(seed))
    funcs = functionals_for(model, cfg.functionals or list(model.param_names))
    ref = reference_values(cfg, model, data, funcs)
    tasks = [(cfg.to_dict(), data.to_dict(), a, e, r, seed) for a in algs for e in epsilons
             for r in range(R)]
    pool = _mapper(workers)
    try:
        results = list(pool.map(_bench_task, tasks) if pool else map(_bench_task, tasks))
    finally:
        if pool:
            pool.shutdown()

    points, rows = [], []
    for a in algs:
        for e in epsilons:
            vals = [res for (_, _, aa, ee, _, _), res in zip(tasks, results) if aa == a and ee == e]
            by_f = {f: float(np.mean([(v[f] - ref[f]) ** 2 for v in vals])) for f in ref}
            plan = cfg.plan(e, a)
            pt = BenchmarkPoint(a, e, cost_of_plan(plan, data.T), sum(by_f.values()), R, by_f)
            points.append(pt)
            for r, v in enumerate(vals):
                rows.append([a, e, r, pt.cost, *(v[f] for f in ref)])
    fits = {}
    for a in algs:
        slope, icpt, r2 = fit_loglog_slope([q for q in points if q.algorithm == a])
        fits[a] = {"slope": slope, "intercept": icpt, "r2": r2, "rate": 1.0 / slope}

    if out_dir or cfg.out:
        out = Path(out_dir or cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        buf_rows = [[q.algorithm, q.epsilon, q.cost, q.mse, q.replicates,
                     *(q.mse_by_functional[f] for f in ref)] for q in points]
        _write_csv(out / "benchmark.csv",
                         ["algorithm", "epsilon", "cost", "mse", "replicates", *(f"mse_{f}" for f in ref)],
                         buf_rows)
        _write_csv(out / "replicates.csv",
                         ["algorithm", "epsilon", "replicate", "cost", *ref], rows)
        _write_json(out / "reference.json", {"kind": b.get("reference", "oracle"), "values": ref,
                                            "data": data.to_dict()})
        _write_json(out / "benchmark_summary.json", {
            "fits": fits, "seed": seed, "T": data.T,
            "plans": {f"{a}@{e!r}": _plan_meta(cfg.plan(e, a), data.T) for a in algs for e in epsilons},
        })
        _write_json(out / "timing.json", {"wall_seconds": time.perf_counter() - t0, "workers": workers})
    return {"points": points, "fits": fits, "reference": ref}


# ------------------------------------------------------- diagnostics ---

def _acf_time(x: np.ndarray, max_lag: int = 1000) -> float:
    """Integrated autocorrelation time with an initial-positive-sequence cutoff."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = len(x)
    var = np.dot(x, x) / n
    if n < 3 or var == 0:
        return 1.0
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:min(n, max_lag)] / (n * var)
    tau = 1.0
    for k in range(1, len(acf)):
        if acf[k] <= 0:
            break
        tau += 2 * acf[k]
    return float(tau)


def diagnose(run_dir) -> dict:
    """Acceptance, autocorrelation time, ESS and running means from trace files."""
    run = Path(run_dir)
    with open(run / "summary.json") as fh:
        summary = json.load(fh)
    burn = summary.get("burn_in", {})
    report = {}
    for trace in sorted(run.glob("trace_l*.csv")):
        lvl = trace.stem[len("trace_l"):]
        with open(trace) as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        names = header[1:-2]
        b = int(burn.get(lvl, 0))
        kept = body[b:]
        report[lvl] = {
            "acceptance": float(body[1:, -1].mean()) if len(body) > 1 else 1.0,
            "iact": {n: _acf_time(kept[:, 1 + i]) for i, n in enumerate(names)},
        }
        report[lvl]["ess"] = {n: len(kept) / t for n, t in report[lvl]["iact"].items()}
        _write_csv(run / f"running_mean_l{lvl}.csv", ["iteration", *names],
                   ([k + b, *row] for k, row in
                    enumerate(np.column_stack([running_mean(kept[:, 1 + i]) for i in range(len(names))]))))
    _write_json(run / "diagnostics.json", report)
    return report
