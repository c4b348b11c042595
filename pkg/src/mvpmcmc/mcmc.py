"""Particle-marginal Metropolis-Hastings: single-level and coupled bi-level chains.

Randomness per iteration ``k`` comes from ``key / ("iter", k)`` split into
``propose``, ``laws``, ``filter`` and ``accept`` streams, so a chain is a
pure function of its key.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Dataset, ModelSpec, ParamTransform, ParamVector, from_unconstrained, \
    log_prior_density, to_unconstrained
from .errors import ChainAborted, ConfigError, DegeneracyError, NumericError
from .filters import bootstrap_pf, delta_pf
from .laws import inert_coupled_laws, inert_laws, propagate_coupled_laws, propagate_laws
from .rng import RandStream, StreamKey


@dataclass(frozen=True)
class ProposalConfig:
    """Diagonal Gaussian random-walk scales on the unconstrained scale.

    A zero scale freezes its coordinate.
    """

    step_scales: tuple[float, ...]

    def __post_init__(self):
        s = tuple(float(v) for v in np.atleast_1d(self.step_scales))
        if any(not np.isfinite(v) or v < 0 for v in s):
            raise ConfigError(f"proposal scales must be finite and nonnegative, got {s}")
        object.__setattr__(self, "step_scales", s)


@dataclass(frozen=True)
class ChainConfig:
    K: int
    level: int
    N: int
    M: int
    proposal: ProposalConfig
    burn_in: int = 0
    theta0: Optional[tuple[float, ...]] = None
    resampling: str = "multinomial"
    pairwise: bool = False
    init_attempts: int = 100
    abort_fraction: float = 0.5
    abort_min_iter: int = 20

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if not 0 <= self.burn_in < self.K:
            raise ConfigError("burn_in must satisfy 0 <= burn_in < K")
        if self.N < 1 or self.M < 1:
            raise ConfigError("N and M must be positive")
        if self.level < 0:
            raise ConfigError("level must be nonnegative")
        if self.resampling not in ("multinomial", "systematic"):
            raise ConfigError(f"unknown resampling scheme {self.resampling!r}")


@dataclass(frozen=True)
class ChainSample:
    theta: ParamVector
    log_lik: float
    trajectory: np.ndarray
    accepted: bool


@dataclass(frozen=True)
class CoupledChainSample:
    theta: ParamVector
    log_lik: float
    fine_trajectory: np.ndarray
    coarse_trajectory: np.ndarray
    accepted: bool


@dataclass
class Chain:
    """``K + 1`` samples stored column-wise; indexing yields sample records."""

    names: tuple[str, ...]
    thetas: np.ndarray  # (K+1, d_theta)
    log_liks: np.ndarray
    accepted: np.ndarray
    trajectories: np.ndarray  # (K+1, T, d)
    coarse_trajectories: Optional[np.ndarray] = None
    level: int = 0
    failures: int = 0
    init_draws: int = 1
    failure_log: list = field(default_factory=list)

    @property
    def coupled(self) -> bool:
        return self.coarse_trajectories is not None

    def __len__(self):
        return self.thetas.shape[0]

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        th = ParamVector(self.thetas[k], self.names)
        if self.coupled:
            return CoupledChainSample(th, float(self.log_liks[k]), self.trajectories[k],
                                      self.coarse_trajectories[k], bool(self.accepted[k]))
        return ChainSample(th, float(self.log_liks[k]), self.trajectories[k], bool(self.accepted[k]))

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @property
    def fine_trajectories(self):
        return self.trajectories

    def acceptance_rate(self) -> float:
        return float(self.accepted[1:].mean()) if len(self) > 1 else 1.0


def propose(theta: ParamVector, cfg: ProposalConfig, transform: ParamTransform,
            stream: RandStream) -> ParamVector:
    scales = np.asarray(cfg.step_scales)
    if len(scales) != len(theta):
        raise ConfigError(f"{len(scales)} proposal scales for {len(theta)} parameters")
    eps = scales * stream.gen.standard_normal(len(scales))
    out = from_unconstrained(to_unconstrained(theta, transform) + eps, transform)
    frozen = eps == 0
    out[frozen] = theta.values[frozen]  # exp(log x) may differ from x in the last bit
    return ParamVector(out, theta.names)


def log_proposal_jacobian(theta, transform: ParamTransform) -> float:
    """``-sum log theta_i`` over log coordinates: the natural-scale density factor."""
    v = np.asarray(getattr(theta, "values", theta))
    return -float(np.sum(np.log(v[transform.log_mask])))


def mh_log_accept(log_lik_new, log_prior_new, log_q_fwd, log_q_rev, log_lik, log_prior) -> float:
    """Acceptance probability ``min(1, exp(log ratio))``; -inf proposal terms give 0."""
    new = log_lik_new + log_prior_new + log_q_rev
    if np.isnan(new) or new == -np.inf or log_q_fwd == np.inf:
        return 0.0
    r = new - log_lik - log_prior - log_q_fwd
    return 1.0 if r >= 0 else float(np.exp(r))


def _kernel_free(model: ModelSpec) -> bool:
    return model.zeta1 is None and model.zeta2 is None


def _likelihood(model, theta, data, cfg: ChainConfig, key: StreamKey, coupled: bool):
    p = model.bind(theta)
    inert = _kernel_free(model)
    if coupled:
        laws = inert_coupled_laws(model, cfg.level, data.T) if inert else propagate_coupled_laws(
            model, p, cfg.N, cfg.level, data.T, key.derive("laws").stream(), cfg.pairwise)
        out = delta_pf(model, p, laws, data, cfg.M, key.derive("filter").stream(),
                       resampling=cfg.resampling, pairwise=cfg.pairwise)
        return out.log_likelihood, out.fine_trajectory, out.coarse_trajectory
    laws = inert_laws(model, cfg.level, data.T) if inert else propagate_laws(
        model, p, cfg.N, cfg.level, data.T, key.derive("laws").stream(), cfg.pairwise)
    out = bootstrap_pf(model, p, laws, data, cfg.M, key.derive("filter").stream(),
                       resampling=cfg.resampling, pairwise=cfg.pairwise)
    return out.log_likelihood, out.trajectory, None


def _initialise(model, data, cfg, key, coupled):
    if cfg.theta0 is not None:
        theta = model.param(list(cfg.theta0))
        return theta, _likelihood(model, theta, data, cfg, key.derive("init", 0), coupled), 1
    last = None
    for i in range(cfg.init_attempts):
        ik = key.derive("init", i)
        theta = model.sample_prior(ik.derive("prior").stream())
        try:
            return theta, _likelihood(model, theta, data, cfg, ik, coupled), i + 1
        except (NumericError, DegeneracyError) as exc:
            last = exc
    raise ChainAborted(f"no prior draw gave a usable likelihood in {cfg.init_attempts} attempts: {last}")


def _run(model: ModelSpec, data: Dataset, cfg: ChainConfig, key: StreamKey, coupled: bool) -> Chain:
    if coupled and cfg.level < 1:
        raise ConfigError("a bi-level chain needs level >= 1")
    theta, (ll, tf, tc), draws = _initialise(model, data, cfg, key, coupled)
    K, T = cfg.K, data.T
    chain = Chain(
        names=model.param_names,
        thetas=np.empty((K + 1, model.d_theta)),
        log_liks=np.empty(K + 1),
        accepted=np.zeros(K + 1, dtype=bool),
        trajectories=np.empty((K + 1, T, model.d)),
        coarse_trajectories=np.empty((K + 1, T, model.d)) if coupled else None,
        level=cfg.level,
        init_draws=draws,
    )
    lp = log_prior_density(model, theta)
    q = log_proposal_jacobian(theta, model.transform)

    def record(k, acc):
        chain.thetas[k] = theta.values
        chain.log_liks[k] = ll
        chain.accepted[k] = acc
        chain.trajectories[k] = tf
        if coupled:
            chain.coarse_trajectories[k] = tc

    record(0, True)
    for k in range(1, K + 1):
        ik = key.derive("iter", k)
        prop = propose(theta, cfg.proposal, model.transform, ik.derive("propose").stream())
        lp_new = log_prior_density(model, prop)
        accept = False
        if np.isfinite(lp_new):
            try:
                ll_new, tf_new, tc_new = _likelihood(model, prop, data, cfg, ik, coupled)
            except (NumericError, DegeneracyError) as exc:
                chain.failures += 1
                if len(chain.failure_log) < 20:
                    chain.failure_log.append({"iteration": k, **exc.record()})
                if k >= cfg.abort_min_iter and chain.failures > cfg.abort_fraction * k:
                    raise ChainAborted(
                        f"{chain.failures} of {k} likelihood evaluations failed; last: {exc}") from exc
            else:
                q_new = log_proposal_jacobian(prop, model.transform)
                alpha = mh_log_accept(ll_new, lp_new, q_new, q, ll, lp)
                if alpha >= 1.0 or ik.derive("accept").stream().gen.random() < alpha:
                    accept = True
                    theta, ll, tf, tc, lp, q = prop, ll_new, tf_new, tc_new, lp_new, q_new
        record(k, accept)
    return chain


def run_pmcmc_chain(model: ModelSpec, data: Dataset, cfg: ChainConfig, root: StreamKey) -> Chain:
    return _run(model, data, cfg, root, coupled=False)


def run_bilevel_chain(model: ModelSpec, data: Dataset, cfg: ChainConfig, root: StreamKey) -> Chain:
    """Coupled chain at levels ``(cfg.level, cfg.level - 1)`` using the Delta filter."""
    return _run(model, data, cfg, root, coupled=True)
