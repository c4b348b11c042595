"""Euler-Maruyama particle approximations of the McKean-Vlasov laws.

One unit interval ``[t-1, t]`` at level ``l`` has ``2**l`` substeps.  A law
cloud is self-driven: the measure used at substep ``j`` is the cloud itself
before the update.  Filter particles are instead driven through the frozen
sequence of measures recorded while propagating a cloud.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import EmpiricalMeasure, ModelSpec, eval_interaction, measure_summary
from .errors import DomainError, NumericBlowUp
from .rng import RandStream, gaussian_vector

BLOWUP = 1e12


@dataclass(frozen=True)
class Level:
    l: int

    def __post_init__(self):
        if self.l < 0:
            raise DomainError(f"level must be nonnegative, got {self.l}")

    @property
    def delta(self) -> float:
        return 2.0 ** -self.l

    @property
    def steps_per_unit(self) -> int:
        return 2 ** self.l

    def coarser(self) -> Level:
        if self.l == 0:
            raise DomainError("no coarser level below l=0")
        return Level(self.l - 1)


def _level(level) -> Level:
    return level if isinstance(level, Level) else Level(int(level))


@dataclass(frozen=True)
class LawPath:
    """Clouds ``measures[j]`` (shape ``(steps, N, d)``) that drive substep ``j``.

    ``summaries[m]`` caches ``mean_n h(z_n)`` per substep for factorized kernels
    (``None`` otherwise); ``noise`` is the Brownian block that was used.
    """

    level: Level
    measures: np.ndarray
    end_particles: np.ndarray
    summaries: tuple = (None, None)
    noise: Optional[np.ndarray] = None

    @property
    def N(self) -> int:
        return self.end_particles.shape[0]

    def measure(self, j: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.measures[j])

    @property
    def end(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.end_particles)


@dataclass(frozen=True)
class CoupledLawPath:
    fine: LawPath
    coarse: LawPath

    def __post_init__(self):
        if self.fine.level.l != self.coarse.level.l + 1:
            raise DomainError("coupled laws must sit on consecutive levels")
        if self.fine.N != self.coarse.N:
            raise DomainError("coupled laws must share the particle count")


def interaction_terms(model, p, x, z, summaries=(None, None), pairwise=False):
    """Averaged interactions (zbar1, zbar2) of the batch ``x`` against atoms ``z``."""
    out = []
    for kernel, s in zip((model.zeta1, model.zeta2), summaries):
        if kernel is None:
            out.append(0.0)  # zero kernel; broadcasts like an (n,) array of zeros
        elif s is not None and not pairwise:
            out.append(np.asarray(kernel.factors[0](p, x), dtype=float) * s)
        else:
            out.append(eval_interaction(kernel, p, x, z, pairwise=pairwise))
    return out


def _apply(model, p, x, zb1, zb2, delta, noise):
    b = model.diffusion(p, x, zb2)
    if x.shape[1] == 1:
        return x + model.drift(p, x, zb1) * delta + b[:, :, 0] * noise
    return x + model.drift(p, x, zb1) * delta + np.einsum("nij,nj->ni", b, noise)


def _check(x, step=None):
    if np.abs(x).max() <= BLOWUP:  # False for NaN too
        return x
    bad = ~np.isfinite(x) | (np.abs(x) > BLOWUP)
    if bad.any():
        i = int(np.argmax(bad.any(axis=1)))
        raise NumericBlowUp(f"state blow-up at particle {i}", particle=i, step=step)
    return x


def euler_step(model: ModelSpec, p, particles, driving_measure, delta, noise,
               pairwise=False, summaries=(None, None)):
    """One Euler-Maruyama step of every particle against ``driving_measure``."""
    x = getattr(particles, "particles", particles)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    z = getattr(driving_measure, "particles", driving_measure)
    zb1, zb2 = interaction_terms(model, p, x, np.atleast_2d(z), summaries, pairwise)
    out = _check(_apply(model, p, x, zb1, zb2, delta, np.reshape(noise, x.shape)))
    return out[0] if single else out


def _self_driven(model, p, x, delta, noise, pairwise):
    """Advance a cloud through ``noise.shape[0]`` self-driven steps."""
    steps = noise.shape[0]
    measures = np.empty((steps,) + x.shape)
    summ = ([], [])
    for j in range(steps):
        measures[j] = x
        s = tuple(measure_summary(k, p, x) for k in (model.zeta1, model.zeta2))
        for acc, v in zip(summ, s):
            acc.append(v)
        zb1, zb2 = interaction_terms(model, p, x, x, s, pairwise)
        x = _check(_apply(model, p, x, zb1, zb2, delta, noise[j]), step=j)
    summaries = tuple(None if v[0] is None else np.array(v) for v in summ)
    return measures, x, summaries


def propagate_law_block(model: ModelSpec, p, init, level, stream: RandStream,
                        pairwise=False, noise=None) -> LawPath:
    lev = _level(level)
    x = np.array(getattr(init, "particles", init), dtype=float, ndmin=2)
    if noise is None:
        noise = gaussian_vector(stream, (lev.steps_per_unit,) + x.shape, lev.delta)
    measures, end, summaries = _self_driven(model, p, x, lev.delta, noise, pairwise)
    return LawPath(lev, measures, end, summaries, noise)


def coarse_increments(fine_noise: np.ndarray) -> np.ndarray:
    """Pairwise sums of consecutive fine increments along the step axis."""
    return fine_noise[0::2] + fine_noise[1::2]


def propagate_coupled_law_block(model: ModelSpec, p, fine_init, coarse_init, fine_level,
                                stream: RandStream, pairwise=False) -> CoupledLawPath:
    lev = _level(fine_level)
    coarse = lev.coarser()
    xf = np.array(getattr(fine_init, "particles", fine_init), dtype=float, ndmin=2)
    xc = np.array(getattr(coarse_init, "particles", coarse_init), dtype=float, ndmin=2)
    if xf.shape != xc.shape:
        raise DomainError("fine and coarse clouds need the same particle count")
    dw = gaussian_vector(stream, (lev.steps_per_unit,) + xf.shape, lev.delta)
    dwc = coarse_increments(dw)
    mf, ef, sf = _self_driven(model, p, xf, lev.delta, dw, pairwise)
    mc, ec, sc = _self_driven(model, p, xc, coarse.delta, dwc, pairwise)
    return CoupledLawPath(LawPath(lev, mf, ef, sf, dw), LawPath(coarse, mc, ec, sc, dwc))


def propagate_laws(model, p, N, level, T, stream, pairwise=False) -> list[LawPath]:
    """Law blocks for ``t = 1..T``; each block starts from the previous end cloud."""
    x = model.initial_cloud(p, N, stream)
    out = []
    for _ in range(T):
        path = propagate_law_block(model, p, x, level, stream, pairwise)
        out.append(path)
        x = path.end_particles
    return out


def propagate_coupled_laws(model, p, N, fine_level, T, stream, pairwise=False) -> list[CoupledLawPath]:
    x = model.initial_cloud(p, N, stream)
    xf = xc = x
    out = []
    for _ in range(T):
        c = propagate_coupled_law_block(model, p, xf, xc, fine_level, stream, pairwise)
        out.append(c)
        xf, xc = c.fine.end_particles, c.coarse.end_particles
    return out


def inert_laws(model, level, T, N=1) -> list[LawPath]:
    """Placeholder law blocks for models without interaction kernels.

    The clouds never enter such dynamics, so nothing is simulated.
    """
    if model.zeta1 is not None or model.zeta2 is not None:
        raise DomainError("inert laws only apply to kernel-free models")
    lev = _level(level)
    x = np.tile(model.x0, (N, 1))
    block = LawPath(lev, np.broadcast_to(x, (lev.steps_per_unit,) + x.shape), x)
    return [block] * T


def inert_coupled_laws(model, fine_level, T, N=1) -> list[CoupledLawPath]:
    lev = _level(fine_level)
    f, c = inert_laws(model, lev, 1, N)[0], inert_laws(model, lev.coarser(), 1, N)[0]
    return [CoupledLawPath(f, c)] * T


def _frozen(model, p, x, laws: LawPath, noise, pairwise, keep_path):
    path = np.empty((noise.shape[0],) + x.shape) if keep_path else None
    for j in range(noise.shape[0]):
        s = tuple(None if a is None else a[j] for a in laws.summaries)
        zb1, zb2 = interaction_terms(model, p, x, laws.measures[j], s, pairwise)
        x = _check(_apply(model, p, x, zb1, zb2, laws.level.delta, noise[j]), step=j)
        if keep_path:
            path[j] = x
    return x, path


def sample_transition_path(model, p, start, laws: LawPath, stream: RandStream,
                           full_path=False, pairwise=False, noise=None):
    """Drive filter particle(s) through one unit interval of frozen laws.

    ``start`` is ``(d,)`` or ``(M, d)``.  Returns ``(end, path)`` with
    ``path[j]`` the state after substep ``j`` (``None`` unless ``full_path``).
    """
    x = np.asarray(start, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if noise is None:
        noise = gaussian_vector(stream, (laws.level.steps_per_unit,) + x.shape, laws.level.delta)
    end, path = _frozen(model, p, x, laws, noise, pairwise, full_path)
    if single:
        return end[0], (None if path is None else path[:, 0])
    return end, path


def sample_coupled_transition_path(model, p, fine_start, coarse_start, coupled: CoupledLawPath,
                                   stream: RandStream, full_path=False, pairwise=False):
    xf = np.asarray(fine_start, dtype=float)
    single = xf.ndim == 1
    xf = np.atleast_2d(xf)
    xc = np.atleast_2d(np.asarray(coarse_start, dtype=float))
    lev = coupled.fine.level
    dw = gaussian_vector(stream, (lev.steps_per_unit,) + xf.shape, lev.delta)
    ef, pf = _frozen(model, p, xf, coupled.fine, dw, pairwise, full_path)
    ec, pc = _frozen(model, p, xc, coupled.coarse, coarse_increments(dw), pairwise, full_path)
    if single:
        ef, ec = ef[0], ec[0]
        pf = None if pf is None else pf[:, 0]
        pc = None if pc is None else pc[:, 0]
    return (ef, pf), (ec, pc)


def simulate_tagged(model: ModelSpec, p, cloud, tagged, level, stream: RandStream, pairwise=False):
    """Advance a cloud and tagged particles it drives over one unit interval.

    Nothing per substep is kept, so large clouds at fine levels stay cheap in
    memory.  Returns ``(cloud_end, tagged_end)``.
    """
    lev = _level(level)
    x = np.array(cloud, dtype=float, ndmin=2)
    u = np.array(tagged, dtype=float, ndmin=2)
    n = x.shape[0]
    for j in range(lev.steps_per_unit):
        dw = gaussian_vector(stream, (n + u.shape[0], x.shape[1]), lev.delta)
        s = tuple(measure_summary(k, p, x) for k in (model.zeta1, model.zeta2))
        zu = interaction_terms(model, p, u, x, s, pairwise)
        zx = interaction_terms(model, p, x, x, s, pairwise)
        u = _check(_apply(model, p, u, *zu, lev.delta, dw[n:]), step=j)
        x = _check(_apply(model, p, x, *zx, lev.delta, dw[:n]), step=j)
    return x, u
