"""Bootstrap and Delta particle filters driven by frozen law approximations.

Weights live in log space.  Ancestor indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import log_expit

from .core import Dataset, ModelSpec
from .errors import DomainError, WeightCollapse
from .laws import CoupledLawPath, LawPath, sample_coupled_transition_path, sample_transition_path
from .rng import RandStream

LOG2 = float(np.log(2.0))


@dataclass(frozen=True)
class WeightVector:
    log_weights: np.ndarray
    normalized: np.ndarray
    log_mean: float

    @property
    def M(self) -> int:
        return len(self.normalized)

    def ess(self) -> float:
        return float(1.0 / np.sum(self.normalized ** 2))


def normalize_log_weights(log_w) -> WeightVector:
    """Max-shifted softmax plus ``log((1/M) sum exp(log_w))``."""
    lw = np.asarray(log_w, dtype=float).reshape(-1)
    if lw.size == 0:
        raise DomainError("no weights to normalize")
    top = np.max(lw)
    if not np.isfinite(top):
        if np.isnan(top) or top < 0:
            raise WeightCollapse("total weight collapse: no finite log-weight")
        raise WeightCollapse("infinite log-weight")
    w = np.exp(lw - top)
    total = w.sum()
    return WeightVector(lw, w / total, float(top + np.log(total / lw.size)))


def multinomial_resample(w: WeightVector, M: int, stream: RandStream) -> np.ndarray:
    """``M`` i.i.d. categorical draws from ``w.normalized`` (inverse CDF)."""
    cdf = np.cumsum(w.normalized)
    idx = np.searchsorted(cdf, stream.gen.random(M) * cdf[-1], side="right")
    return np.minimum(idx, len(cdf) - 1)


def systematic_resample(w: WeightVector, M: int, stream: RandStream) -> np.ndarray:
    cdf = np.cumsum(w.normalized)
    u = (stream.gen.random() + np.arange(M)) / M
    return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), len(cdf) - 1)


RESAMPLERS = {"multinomial": multinomial_resample, "systematic": systematic_resample}


def sample_index(w: WeightVector, stream: RandStream) -> int:
    return int(multinomial_resample(w, 1, stream)[0])


def coupled_weight_H(model: ModelSpec, p, x_fine, x_coarse, y):
    """``log(0.5 * (g(x_fine, y) + g(x_coarse, y)))``; symmetric in its arguments."""
    return np.logaddexp(model.log_obs(p, np.atleast_2d(x_fine), y),
                        model.log_obs(p, np.atleast_2d(x_coarse), y)) - LOG2 \
        if np.ndim(x_fine) > 1 else \
        float(np.logaddexp(model.log_obs(p, np.atleast_2d(x_fine), y)[0],
                           model.log_obs(p, np.atleast_2d(x_coarse), y)[0]) - LOG2)


def correction_weight_Hcheck(model: ModelSpec, p, x_first, x_second, y):
    """``log g(x_first) - log H(x_first, x_second)``; the ratio lies in (0, 2)."""
    out = log_hcheck_from_logg(model.log_obs(p, np.atleast_2d(x_first), y),
                               model.log_obs(p, np.atleast_2d(x_second), y))
    return out if np.ndim(x_first) > 1 else float(out[0])


def log_hcheck_from_logg(lg_first, lg_second):
    """Same as :func:`correction_weight_Hcheck` from precomputed log densities.

    Written as ``log 2 + log sigmoid(lg_first - lg_second)`` so only the
    difference of the log densities enters; large magnitudes lose no precision.
    """
    return LOG2 + log_expit(np.subtract(lg_first, lg_second))


@dataclass(frozen=True)
class FilterOutput:
    log_likelihood: float
    trajectory: np.ndarray  # (T, d) at integer times
    paths: Optional[np.ndarray] = None  # (T, steps, d) when requested


@dataclass(frozen=True)
class CoupledFilterOutput:
    log_likelihood: float
    fine_trajectory: np.ndarray
    coarse_trajectory: np.ndarray
    fine_paths: Optional[np.ndarray] = None
    coarse_paths: Optional[np.ndarray] = None


def _trace(ends, ancestors, paths, last):
    T = ends.shape[0]
    traj = np.empty((T,) + ends.shape[2:])
    full = None if paths is None else np.empty((T, paths[0].shape[0]) + ends.shape[2:])
    idx = last
    for s in range(T - 1, -1, -1):
        if s < T - 1:
            idx = ancestors[s, idx]
        traj[s] = ends[s, idx]
        if full is not None:
            full[s] = paths[s][:, idx]
    return traj, full


def _weights(lw, s):
    try:
        return normalize_log_weights(lw)
    except WeightCollapse as exc:
        raise WeightCollapse(f"{exc} at time step {s + 1}", time_step=s + 1) from None


def bootstrap_pf(model: ModelSpec, p, laws: Sequence[LawPath], data: Dataset, M: int,
                 stream: RandStream, full_path=False, resampling="multinomial",
                 pairwise=False) -> FilterOutput:
    T = data.T
    if len(laws) != T:
        raise DomainError(f"need {T} law blocks, got {len(laws)}")
    if M < 1:
        raise DomainError("M must be positive")
    resample = RESAMPLERS[resampling]
    x = model.initial_cloud(p, M, stream)
    ends = np.empty((T, M, model.d))
    anc = np.empty((T, M), dtype=np.int64)
    paths = [] if full_path else None
    ll = 0.0
    for s in range(T):
        x, path = sample_transition_path(model, p, x, laws[s], stream, full_path, pairwise)
        ends[s] = x
        if full_path:
            paths.append(path)
        w = _weights(model.log_obs(p, x, data.observations[s]), s)
        ll += w.log_mean
        anc[s] = resample(w, M, stream)
        x = x[anc[s]]
    traj, full = _trace(ends, anc, paths, sample_index(w, stream))
    return FilterOutput(ll, traj, full)


def delta_pf(model: ModelSpec, p, coupled_laws: Sequence[CoupledLawPath], data: Dataset, M: int,
             stream: RandStream, full_path=False, resampling="multinomial", weight="H",
             pairwise=False) -> CoupledFilterOutput:
    """Filter on fine/coarse pairs weighted by H and sharing one ancestor vector.

    ``weight="fine"`` weights pairs by the fine density alone (validation mode).
    """
    T = data.T
    if len(coupled_laws) != T:
        raise DomainError(f"need {T} coupled law blocks, got {len(coupled_laws)}")
    resample = RESAMPLERS[resampling]
    xf = model.initial_cloud(p, M, stream)
    xc = xf.copy()
    ends_f = np.empty((T, M, model.d))
    ends_c = np.empty_like(ends_f)
    anc = np.empty((T, M), dtype=np.int64)
    pf, pc = ([], []) if full_path else (None, None)
    ll = 0.0
    for s in range(T):
        (xf, path_f), (xc, path_c) = sample_coupled_transition_path(
            model, p, xf, xc, coupled_laws[s], stream, full_path, pairwise)
        ends_f[s], ends_c[s] = xf, xc
        if full_path:
            pf.append(path_f)
            pc.append(path_c)
        y = data.observations[s]
        lgf = model.log_obs(p, xf, y)
        lw = lgf if weight == "fine" else np.logaddexp(lgf, model.log_obs(p, xc, y)) - LOG2
        w = _weights(lw, s)
        ll += w.log_mean
        anc[s] = resample(w, M, stream)
        xf, xc = xf[anc[s]], xc[anc[s]]
    last = sample_index(w, stream)
    tf, ff = _trace(ends_f, anc, pf, last)
    tc, fc = _trace(ends_c, anc, pc, last)
    return CoupledFilterOutput(ll, tf, tc, ff, fc)
