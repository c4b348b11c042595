"""Multilevel estimator: base average, weighted increments, telescoping sum."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Dataset, ModelSpec, TestFunctional
from .errors import ConfigError, DomainError, InsufficientSamples, WeightDegeneracy
from .filters import log_hcheck_from_logg
from .mcmc import Chain, ChainConfig, ProposalConfig, run_bilevel_chain, run_pmcmc_chain
from .rng import StreamKey


@dataclass(frozen=True)
class LevelPlan:
    """Levels ``l_star..L`` with their law particles and chain lengths.

    ``L == l_star`` is a single-level plan (no increments).
    """

    l_star: int
    L: int
    N_l: dict
    K_l: dict
    M: int
    epsilon: Optional[float] = None

    def __post_init__(self):
        if not 0 <= self.l_star <= self.L:
            raise ConfigError(f"need 0 <= l_star <= L, got l_star={self.l_star}, L={self.L}")
        N = {int(k): int(v) for k, v in self.N_l.items()}
        K = {int(k): int(v) for k, v in self.K_l.items()}
        for l in self.levels:
            if N.get(l, 0) < 1 or K.get(l, 0) < 1:
                raise ConfigError(f"N_l and K_l must be positive at every level, missing l={l}")
        if self.M < 1:
            raise ConfigError("M must be positive")
        object.__setattr__(self, "N_l", N)
        object.__setattr__(self, "K_l", K)

    @property
    def levels(self) -> range:
        return range(self.l_star, self.L + 1)

    def to_dict(self) -> dict:
        return {"l_star": self.l_star, "L": self.L, "M": self.M, "epsilon": self.epsilon,
                "N_l": {str(l): self.N_l[l] for l in self.levels},
                "K_l": {str(l): self.K_l[l] for l in self.levels}}


@dataclass(frozen=True)
class MLEstimate:
    value: float
    base_term: float
    increments: tuple[float, ...] = ()
    ess: tuple = ()  # (fine, coarse) per increment level

    def to_dict(self) -> dict:
        return {"value": self.value, "base_term": self.base_term,
                "increments": list(self.increments), "ess": [list(e) for e in self.ess]}


def allocate_levels(epsilon: float, l_star: int, c_K: float = 1.0, c_N: float = 1.0,
                    M: int = 100) -> LevelPlan:
    """Theory-driven allocation: ``K_l ~ eps^-2 D_l^(6/7)``, ``N_l ~ eps^-2 D_l^(1/2)``."""
    if not 0 < epsilon < 1:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    if l_star < 0:
        raise DomainError("l_star must be nonnegative")
    L = max(l_star + 1, math.ceil(math.log2(1.0 / epsilon) - 1e-12))
    e2 = epsilon ** -2
    K = {l: math.ceil(c_K * e2 * 2.0 ** (-6 * l / 7)) for l in range(l_star, L + 1)}
    N = {l: math.ceil(c_N * e2 * 2.0 ** (-l / 2)) for l in range(l_star, L + 1)}
    return LevelPlan(l_star, L, N, K, M, epsilon)


def single_level_plan(epsilon: float, c_K: float = 1.0, c_N: float = 1.0, M: int = 100) -> LevelPlan:
    """Single-level counterpart at the same accuracy: level ``ceil(log2(1/eps))``."""
    if not 0 < epsilon < 1:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    L = max(0, math.ceil(math.log2(1.0 / epsilon) - 1e-12))
    e2 = epsilon ** -2
    return LevelPlan(L, L, {L: math.ceil(c_N * e2)}, {L: math.ceil(c_K * e2)}, M, epsilon)


def cost_of_plan(plan: LevelPlan, T: int) -> float:
    """Operation count ``sum_l K_l 2^l (N_l^2 + M N_l) T``."""
    return float(sum(plan.K_l[l] * 2 ** l * (plan.N_l[l] ** 2 + plan.M * plan.N_l[l]) * T
                     for l in plan.levels))


def _retained(samples, burn_in: int) -> range:
    n = len(samples)
    if burn_in < 0 or burn_in >= n:
        raise InsufficientSamples(f"no samples left after burn-in {burn_in} of {n}")
    return range(burn_in, n)


def _theta_rows(samples):
    if isinstance(samples, Chain):
        return samples.thetas
    return np.array([s.theta.values for s in samples])


def estimate_base(samples, phi: TestFunctional, burn_in: int = 0) -> float:
    keep = _retained(samples, burn_in)
    th = _theta_rows(samples)
    if isinstance(samples, Chain):
        tr = samples.trajectories
    else:
        tr = [s.trajectory for s in samples]
    return float(np.mean([phi(th[k], tr[k]) for k in keep]))


def _side_average(logw, values, side):
    top = np.max(logw)
    if not np.isfinite(top):
        raise WeightDegeneracy(f"all {side} correction weights vanish", side=side)
    w = np.exp(logw - top)
    w /= w.sum()
    return float(np.dot(w, values)), float(1.0 / np.sum(w * w))


def correction_terms(samples, model: ModelSpec, data: Dataset, phi: TestFunctional,
                     burn_in: int = 0):
    """Per retained sample: log fine/coarse correction weights and phi values."""
    keep = _retained(samples, burn_in)
    th = _theta_rows(samples)
    if isinstance(samples, Chain):
        fine, coarse = samples.trajectories, samples.coarse_trajectories
    else:
        fine = [s.fine_trajectory for s in samples]
        coarse = [s.coarse_trajectory for s in samples]
    y = data.observations
    n = len(keep)
    lw_f, lw_c = np.empty(n), np.empty(n)
    phi_f, phi_c = np.empty(n), np.empty(n)
    for i, k in enumerate(keep):
        p = model.bind(th[k])
        xf, xc = np.asarray(fine[k]), np.asarray(coarse[k])
        gf, gc = model.log_obs(p, xf, y), model.log_obs(p, xc, y)
        lw_f[i] = np.sum(log_hcheck_from_logg(gf, gc))
        lw_c[i] = np.sum(log_hcheck_from_logg(gc, gf))
        phi_f[i], phi_c[i] = phi(th[k], xf), phi(th[k], xc)
    return lw_f, lw_c, phi_f, phi_c


def increment_with_ess(samples, model: ModelSpec, data: Dataset, phi: TestFunctional,
                       burn_in: int = 0) -> tuple[float, float, float]:
    """Increment plus the effective sample size of each self-normalized side."""
    lw_f, lw_c, phi_f, phi_c = correction_terms(samples, model, data, phi, burn_in)
    mf, ess_f = _side_average(lw_f, phi_f, "fine")
    mc, ess_c = _side_average(lw_c, phi_c, "coarse")
    return mf - mc, ess_f, ess_c


def running_increment(lw_f, lw_c, phi_f, phi_c) -> np.ndarray:
    """Increment estimate over every prefix of the retained samples."""
    def side(lw, v):
        w = np.exp(lw - np.max(lw))
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.cumsum(w * v) / np.cumsum(w)
    return side(lw_f, phi_f) - side(lw_c, phi_c)


def estimate_increment(samples, model: ModelSpec, data: Dataset, phi: TestFunctional,
                       burn_in: int = 0) -> float:
    return increment_with_ess(samples, model, data, phi, burn_in)[0]


def combine_ml_estimate(base: float, increments: Sequence[float], ess=()) -> MLEstimate:
    incs = tuple(float(v) for v in increments)
    value = float(base)
    for v in incs:
        value += v
    return MLEstimate(value, float(base), incs, tuple(ess))


@dataclass
class MLRun:
    plan: LevelPlan
    chains: dict  # level -> Chain; chains[l_star] is single-level, others coupled
    estimates: dict = field(default_factory=dict)  # functional label -> MLEstimate


def level_configs(plan: LevelPlan, proposal: ProposalConfig, burn_in_frac: float = 0.1,
                  theta0=None, resampling="multinomial", pairwise=False) -> dict:
    if not 0 <= burn_in_frac < 1:
        raise ConfigError("burn_in_frac must lie in [0, 1)")
    return {l: ChainConfig(K=plan.K_l[l], level=l, N=plan.N_l[l], M=plan.M, proposal=proposal,
                           burn_in=int(burn_in_frac * plan.K_l[l]), theta0=theta0,
                           resampling=resampling, pairwise=pairwise)
            for l in plan.levels}


def run_level(model, data, cfg: ChainConfig, key: StreamKey, base: bool) -> Chain:
    run = run_pmcmc_chain if base else run_bilevel_chain
    return run(model, data, cfg, key.derive("level", cfg.level))


def ml_estimates(model, data, plan: LevelPlan, chains: dict, cfgs: dict,
                 functionals: Sequence[TestFunctional]) -> dict:
    out = {}
    for phi in functionals:
        base = estimate_base(chains[plan.l_star], phi, cfgs[plan.l_star].burn_in)
        incs, ess = [], []
        for l in plan.levels[1:]:
            v, ef, ec = increment_with_ess(chains[l], model, data, phi, cfgs[l].burn_in)
            incs.append(v)
            ess.append((ef, ec))
        out[phi.label] = combine_ml_estimate(base, incs, ess)
    return out


def run_mlpmcmc(model: ModelSpec, data: Dataset, plan: LevelPlan, proposal: ProposalConfig,
                functionals: Sequence[TestFunctional], key: StreamKey, burn_in_frac: float = 0.1,
                theta0=None, mapper: Optional[Callable] = None, **chain_kw) -> MLRun:
    """Independent chains per level, then the telescoping estimate per functional.

    ``mapper(fn, iterable)`` may dispatch the level chains elsewhere; results
    depend only on ``key``, never on scheduling.
    """
    cfgs = level_configs(plan, proposal, burn_in_frac, theta0, **chain_kw)
    jobs = [(l, cfgs[l]) for l in plan.levels]
    run = lambda job: run_level(model, data, job[1], key, job[0] == plan.l_star)
    results = list((mapper or map)(run, jobs))
    chains = {l: ch for (l, _), ch in zip(jobs, results)}
    return MLRun(plan, chains, ml_estimates(model, data, plan, chains, cfgs, functionals))
