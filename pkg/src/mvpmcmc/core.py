"""Model abstractions shared by every other module.

States are numpy arrays. A batch of ``n`` states has shape ``(n, d)``; an
:class:`EmpiricalMeasure` wraps an ``(N, d)`` array of equally weighted atoms.
Model callables receive ``p``, a plain ``dict`` holding every model constant
with the free coordinates of the current parameter vector merged in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateMeasure, DomainError, NumericOverflow

LOG_2PI = float(np.log(2.0 * np.pi))
_CHUNK = 1 << 22  # max kernel-matrix entries held at once


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if len(v) != len(self.names):
            raise DomainError(f"{len(v)} values for {len(self.names)} names")
        if not np.all(np.isfinite(v)):
            raise DomainError(f"non-finite parameter {v}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self):
        return len(self.names)

    def __getitem__(self, key):
        i = key if isinstance(key, (int, np.integer)) else self.names.index(key)
        return float(self.values[i])

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def replace(self, values) -> ParamVector:
        return ParamVector(values, self.names)


@dataclass(frozen=True)
class ParamTransform:
    """Per-coordinate ``"identity"`` or ``"log"`` map to an unconstrained scale."""

    flags: tuple[str, ...]

    def __post_init__(self):
        bad = set(self.flags) - {"identity", "log"}
        if bad:
            raise DomainError(f"unknown transform flags {bad}")
        object.__setattr__(self, "flags", tuple(self.flags))

    @property
    def log_mask(self) -> np.ndarray:
        return np.array([f == "log" for f in self.flags], dtype=bool)


def to_unconstrained(theta, t: ParamTransform) -> np.ndarray:
    v = np.array(getattr(theta, "values", theta), dtype=float).reshape(-1)
    mask = t.log_mask
    if np.any(v[mask] <= 0):
        raise DomainError("log-transformed coordinate must be positive")
    out = v.copy()
    out[mask] = np.log(v[mask])
    return out


def from_unconstrained(v, t: ParamTransform, names=None):
    v = np.asarray(v, dtype=float).reshape(-1)
    out = v.copy()
    mask = t.log_mask
    out[mask] = np.exp(v[mask])
    if names is None:
        return out
    return ParamVector(out, names)


@dataclass(frozen=True)
class EmpiricalMeasure:
    particles: np.ndarray

    def __post_init__(self):
        x = np.array(self.particles, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1:
            raise DegenerateMeasure("empirical measure needs at least one particle")
        x.setflags(write=False)
        object.__setattr__(self, "particles", x)

    @property
    def N(self) -> int:
        return self.particles.shape[0]

    @property
    def d(self) -> int:
        return self.particles.shape[1]

    def mean(self) -> np.ndarray:
        return self.particles.mean(axis=0)


@dataclass(frozen=True)
class Kernel:
    """Scalar interaction kernel ``zeta(p, x, z)``.

    ``pairwise(p, x, z)`` maps ``(n, d)`` and ``(m, d)`` arrays to the ``(n, m)``
    matrix of kernel values.  Kernels of the product form
    ``f(p, x) * h(p, z)`` may also supply ``factors=(f, h)``; the averaged
    interaction then costs O(n + m) instead of O(n m).
    """

    pairwise: Callable
    factors: Optional[tuple[Callable, Callable]] = None
    label: str = ""


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


def eval_interaction(kernel: Optional[Kernel], p, x, mu, pairwise: bool = False):
    """Average ``zeta(p, x, z)`` over the atoms ``z`` of ``mu``.

    ``x`` is one state ``(d,)`` (scalar result) or a batch ``(n, d)``.
    ``kernel=None`` stands for the zero kernel.  ``pairwise=True`` forces the
    O(n N) double sum even when the kernel factorizes.
    """
    z = mu.particles if isinstance(mu, EmpiricalMeasure) else _as_batch(mu)
    if z.shape[0] == 0:
        raise DegenerateMeasure("interaction against an empty measure")
    single = np.ndim(x) == 1
    xb = _as_batch(x)
    if kernel is None:
        out = np.zeros(xb.shape[0])
    elif kernel.factors is not None and not pairwise:
        f, h = kernel.factors
        out = np.asarray(f(p, xb), dtype=float) * float(np.mean(h(p, z)))
    else:
        rows = max(1, _CHUNK // z.shape[0])
        out = np.concatenate([
            np.asarray(kernel.pairwise(p, xb[i:i + rows], z), dtype=float).mean(axis=1)
            for i in range(0, xb.shape[0], rows)
        ])
    if not np.all(np.isfinite(out)):
        raise NumericOverflow("non-finite interaction average")
    return float(out[0]) if single else out


def measure_summary(kernel: Optional[Kernel], p, z: np.ndarray):
    """Law-side part of a factorized kernel: ``mean_n h(p, z_n)``.

    Returns ``None`` when the kernel is zero or does not factorize.
    """
    if kernel is None or kernel.factors is None:
        return None
    return float(np.mean(kernel.factors[1](p, z)))


@dataclass(frozen=True)
class NormalPrior:
    """Gaussian prior on one coordinate's unconstrained scale."""

    mean: float = 0.0
    sd: float = 1.0

    def logpdf(self, v):
        z = (np.asarray(v) - self.mean) / self.sd
        return -0.5 * z * z - np.log(self.sd) - 0.5 * LOG_2PI


@dataclass(frozen=True)
class ModelSpec:
    """A partially observed McKean-Vlasov model.

    ``drift(p, x, zbar1) -> (n, d)``, ``diffusion(p, x, zbar2) -> (n, d, d)``,
    ``log_obs(p, x, y) -> (n,)`` where ``y`` is ``(d_y,)`` or ``(n, d_y)``.
    ``init_sampler(p, n, stream) -> (n, d)`` draws the initial cloud; without
    it every particle starts at ``x0``.
    """

    name: str
    d: int
    d_y: int
    param_names: tuple[str, ...]
    fixed: dict
    transform: ParamTransform
    priors: tuple[NormalPrior, ...]
    drift: Callable
    diffusion: Callable
    zeta1: Optional[Kernel]
    zeta2: Optional[Kernel]
    log_obs: Callable
    x0: np.ndarray
    obs_sampler: Optional[Callable] = None
    init_sampler: Optional[Callable] = None
    truth: Optional[dict] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "param_names", tuple(self.param_names))
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(self.d))
        if len(self.transform.flags) != len(self.param_names):
            raise DomainError("transform length does not match parameters")
        if len(self.priors) != len(self.param_names):
            raise DomainError("one prior per free parameter required")

    @property
    def d_theta(self) -> int:
        return len(self.param_names)

    def param(self, values) -> ParamVector:
        if isinstance(values, dict):
            values = [values[n] for n in self.param_names]
        return ParamVector(values, self.param_names)

    def bind(self, theta) -> dict:
        p = dict(self.fixed)
        vals = getattr(theta, "values", theta)
        p.update(zip(self.param_names, map(float, np.asarray(vals).reshape(-1))))
        return p

    def true_theta(self) -> ParamVector:
        src = dict(self.fixed)
        src.update(self.truth or {})
        return self.param({n: src[n] for n in self.param_names})

    def initial_cloud(self, p, n: int, stream=None) -> np.ndarray:
        if self.init_sampler is None or stream is None:
            return np.tile(self.x0, (n, 1))
        return np.asarray(self.init_sampler(p, n, stream), dtype=float).reshape(n, self.d)

    def sample_prior(self, stream) -> ParamVector:
        v = np.array([pr.mean + pr.sd * stream.gen.standard_normal() for pr in self.priors])
        return from_unconstrained(v, self.transform, self.param_names)


def log_prior_density(model: ModelSpec, theta) -> float:
    """Log prior density on the natural scale (log-Jacobian included)."""
    vals = np.asarray(getattr(theta, "values", theta), dtype=float).reshape(-1)
    mask = model.transform.log_mask
    if np.any(vals[mask] <= 0):
        return -np.inf
    v = vals.copy()
    v[mask] = np.log(vals[mask])
    lp = sum(float(pr.logpdf(vi)) for pr, vi in zip(model.priors, v))
    return lp - float(np.sum(v[mask]))


@dataclass(frozen=True)
class Dataset:
    observations: np.ndarray
    latent: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.array(self.observations, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[0] < 1:
            raise DomainError("dataset needs T >= 1 observation vectors")
        y.setflags(write=False)
        object.__setattr__(self, "observations", y)
        if self.latent is not None:
            object.__setattr__(self, "latent", np.array(self.latent, dtype=float).reshape(y.shape[0], -1))

    @property
    def T(self) -> int:
        return self.observations.shape[0]

    @property
    def d_y(self) -> int:
        return self.observations.shape[1]

    def to_dict(self) -> dict:
        out = {"T": self.T, "observations": self.observations.tolist()}
        if self.latent is not None:
            out["latent"] = self.latent.tolist()
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> Dataset:
        return cls(raw["observations"], raw.get("latent"))


@dataclass(frozen=True)
class TestFunctional:
    evaluator: Callable
    label: str

    __test__ = False  # not a pytest class

    def __call__(self, theta, traj) -> float:
        return float(self.evaluator(np.asarray(theta), np.asarray(traj)))


def param_functional(model: ModelSpec, name: str) -> TestFunctional:
    i = model.param_names.index(name)
    return TestFunctional(lambda th, x, _i=i: th[_i], name)


def state_mean_functional(coord: int = 0, label=None) -> TestFunctional:
    return TestFunctional(lambda th, x, _c=coord: np.mean(x[:, _c]), label or f"mean_x{coord}")


def functionals_for(model: ModelSpec, names: Sequence[str]) -> list[TestFunctional]:
    out = []
    for name in names:
        if name in model.param_names:
            out.append(param_functional(model, name))
        elif name.startswith("mean_x"):
            out.append(state_mean_functional(int(name[6:]), name))
        else:
            raise DomainError(f"unknown test functional {name!r}")
    return out
