"""Concrete models and exact oracles.

``neuron3d`` is the three-dimensional FitzHugh-Nagumo-type population model
with synaptic gating; ``ou-meanfield`` and ``linear-gaussian`` are
verification models whose likelihoods can be computed by Kalman recursions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .core import (
    LOG_2PI,
    Dataset,
    EmpiricalMeasure,
    Kernel,
    ModelSpec,
    NormalPrior,
    ParamTransform,
    eval_interaction,
)
from .errors import ConfigError, DomainError, SingularError


def gaussian_logpdf_diag(x, y, sds):
    sds = np.asarray(sds, dtype=float)
    if np.any(sds <= 0):
        raise DomainError(f"observation noise must be positive, got {sds}")
    z = (np.asarray(y) - np.asarray(x)) / sds
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(sds)) - 0.5 * len(sds) * LOG_2PI


# ---------------------------------------------------------------- neuron ---

@dataclass
class NeuronParams:
    a: float = 0.7
    b: float = 0.8
    c: float = 0.08
    I: float = 0.5
    b_ext: float = 0.5
    V_rev: float = 1.0
    a_r: float = 1.0
    a_d: float = 1.0
    T_max: float = 1.0
    lam: float = 0.2
    J: float = 1.0
    b_J: float = 0.2
    V_T: float = 2.0
    Gamma: float = 0.1
    Lambda: float = 0.5
    V0: float = 0.0
    w0: float = 0.5
    y0: float = 0.3
    sd_V0: float = 0.4
    sd_w0: float = 0.4
    sd_y0: float = 0.05
    sigma1: float = 0.2
    sigma2: float = 0.1
    sigma3: float = 0.02

    def as_dict(self) -> dict:
        return asdict(self)


NEURON_FREE = ("I", "J", "c", "lam", "b_ext", "Gamma", "sigma1", "sigma2", "sigma3")
NEURON_LOG = {"c", "lam", "b_ext", "Gamma", "sigma1", "sigma2", "sigma3"}


def _syn_gate(p, x):
    """Rise term a_r T_max (1 - x3) sigmoid(lam (x1 - V_T))."""
    return p["a_r"] * p["T_max"] * (1.0 - x[:, 2]) * expit(p["lam"] * (x[:, 0] - p["V_T"]))


def _neuron_zeta1(p, x, z):
    return np.outer(p["J"] * (x[:, 0] - p["V_rev"]), z[:, 2])


def _neuron_zeta2(p, x, z):
    return np.outer(p["b_J"] * (x[:, 0] - p["V_rev"]), z[:, 2])


NEURON_ZETA1 = Kernel(_neuron_zeta1, (lambda p, x: p["J"] * (x[:, 0] - p["V_rev"]),
                                      lambda p, z: z[:, 2]), "J(x1-Vrev)z3")
NEURON_ZETA2 = Kernel(_neuron_zeta2, (lambda p, x: p["b_J"] * (x[:, 0] - p["V_rev"]),
                                      lambda p, z: z[:, 2]), "bJ(x1-Vrev)z3")


def _neuron_drift(p, x, zb1):
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    out = np.empty_like(x)
    out[:, 0] = x1 - x1 ** 3 / 3.0 - x2 + p["I"] - zb1
    out[:, 1] = p["c"] * (x1 + p["a"] - p["b"] * x2)
    out[:, 2] = _syn_gate(p, x) - p["a_d"] * x3
    return out


def b32(p, x):
    """Gating-noise coefficient; zero outside 0 < x3 < 1."""
    x = np.atleast_2d(x)
    x3 = x[:, 2]
    inside = (x3 > 0.0) & (x3 < 1.0)
    # sqrt argument can dip to -1e-17 near x3 = 0 through rounding
    rate = np.sqrt(np.maximum(_syn_gate(p, x) + p["a_d"] * x3, 0.0))
    denom = np.where(inside, 1.0 - (2.0 * x3 - 1.0) ** 2, 1.0)
    damp = np.exp(-p["Lambda"] / denom)
    return np.where(inside, rate * p["Gamma"] * damp, 0.0)


def _neuron_diffusion(p, x, zb2):
    out = np.zeros((x.shape[0], 3, 3))
    out[:, 0, 0] = p["b_ext"]
    out[:, 0, 2] = -zb2
    out[:, 2, 1] = b32(p, x)
    return out


def _neuron_log_obs(p, x, y):
    return gaussian_logpdf_diag(x, y, (p["sigma1"], p["sigma2"], p["sigma3"]))


def _neuron_obs(p, x, stream):
    sds = np.array([p["sigma1"], p["sigma2"], p["sigma3"]])
    return x + sds * stream.gen.standard_normal(x.shape)


def _neuron_init(p, n, stream):
    mean = np.array([p["V0"], p["w0"], p["y0"]])
    sd = np.array([p["sd_V0"], p["sd_w0"], p["sd_y0"]])
    return mean + sd * stream.gen.standard_normal((n, 3))


def _as_p(params):
    if isinstance(params, dict):
        return params
    return params.as_dict()


def neuron_drift(params, x, mu):
    p = _as_p(params)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    zb1 = eval_interaction(NEURON_ZETA1, p, x, mu)
    return _neuron_drift(p, x, zb1)[0] if x.shape[0] == 1 else _neuron_drift(p, x, zb1)


def neuron_diffusion(params, x, mu):
    p = _as_p(params)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = _neuron_diffusion(p, x, eval_interaction(NEURON_ZETA2, p, x, mu))
    return out[0] if x.shape[0] == 1 else out


def neuron_obs_logdensity(params, x, y):
    p = _as_p(params)
    out = _neuron_log_obs(p, np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def neuron3d_spec(params: Optional[NeuronParams] = None, free: Sequence[str] = NEURON_FREE,
                  priors: Optional[dict] = None, gaussian_init: bool = True) -> ModelSpec:
    p = (params or NeuronParams()).as_dict()
    free = tuple(free)
    flags = tuple("log" if n in NEURON_LOG else "identity" for n in free)
    return ModelSpec(
        name="neuron3d", d=3, d_y=3, param_names=free,
        fixed={k: v for k, v in p.items() if k not in free},
        transform=ParamTransform(flags),
        priors=_default_priors(free, flags, p, priors, sd=1.0),
        drift=_neuron_drift, diffusion=_neuron_diffusion,
        zeta1=NEURON_ZETA1, zeta2=NEURON_ZETA2,
        log_obs=_neuron_log_obs, x0=[p["V0"], p["w0"], p["y0"]],
        obs_sampler=_neuron_obs, init_sampler=_neuron_init if gaussian_init else None,
        truth=p,
    )


def _default_priors(free, flags, truth, overrides, sd):
    """Gaussian priors on the unconstrained scale, centred on the true values."""
    out = []
    overrides = overrides or {}
    for name, flag in zip(free, flags):
        if name in overrides:
            m, s = overrides[name]
        else:
            m = np.log(truth[name]) if flag == "log" else truth[name]
            s = sd
        out.append(NormalPrior(float(m), float(s)))
    return tuple(out)


# ------------------------------------------------------- mean-field OU ---

@dataclass
class OUMeanFieldParams:
    pull: float = 1.0
    sigma: float = 0.5
    m0: float = 0.0
    obs_sd: float = 0.5

    def as_dict(self) -> dict:
        return asdict(self)


OU_ZETA1 = Kernel(lambda p, x, z: np.broadcast_to(z[:, 0], (x.shape[0], z.shape[0])),
                  (lambda p, x: np.ones(x.shape[0]), lambda p, z: z[:, 0]), "z")
OU_ZETA2 = Kernel(lambda p, x, z: np.ones((x.shape[0], z.shape[0])),
                  (lambda p, x: np.ones(x.shape[0]), lambda p, z: np.ones(z.shape[0])), "1")


def _ou_drift(p, x, zb1):
    return p["pull"] * (zb1[:, None] - x)


def _ou_diffusion(p, x, zb2):
    return (p["sigma"] * zb2)[:, None, None]


def _scalar_gauss_log_obs(p, x, y):
    return gaussian_logpdf_diag(x, y, (p["obs_sd"],))


def _scalar_gauss_obs(p, x, stream):
    return x + p["obs_sd"] * stream.gen.standard_normal(x.shape)


def ou_meanfield_spec(params: Optional[OUMeanFieldParams] = None,
                      free: Sequence[str] = ("pull", "sigma"),
                      priors: Optional[dict] = None) -> ModelSpec:
    p = (params or OUMeanFieldParams()).as_dict()
    if p["pull"] < 0 or p["sigma"] < 0:
        raise DomainError("pull and sigma must be nonnegative")
    free = tuple(free)
    flags = tuple("log" if n in ("pull", "sigma", "obs_sd") else "identity" for n in free)
    return ModelSpec(
        name="ou-meanfield", d=1, d_y=1, param_names=free,
        fixed={k: v for k, v in p.items() if k not in free},
        transform=ParamTransform(flags),
        priors=_default_priors(free, flags, p, priors, sd=0.5),
        drift=_ou_drift, diffusion=_ou_diffusion, zeta1=OU_ZETA1, zeta2=OU_ZETA2,
        log_obs=_scalar_gauss_log_obs, x0=[p["m0"]], obs_sampler=_scalar_gauss_obs,
        truth=p,
    )


# ----------------------------------------------------- linear Gaussian ---

@dataclass
class LinearGaussianParams:
    """dX = (A X + B) dt + sigma dW,  Y = X + N(0, obs_sd^2), X_0 = x0."""

    A: float = -0.5
    B: float = 0.5
    sigma: float = 0.5
    obs_sd: float = 0.5
    x0: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def _lg_drift(p, x, zb1):
    return p["A"] * x + p["B"]


def _lg_diffusion(p, x, zb2):
    return np.full((x.shape[0], 1, 1), p["sigma"])


def linear_gaussian_spec(params: Optional[LinearGaussianParams] = None,
                         free: Sequence[str] = ("B",), priors: Optional[dict] = None) -> ModelSpec:
    p = (params or LinearGaussianParams()).as_dict()
    free = tuple(free)
    flags = tuple("log" if n in ("sigma", "obs_sd") else "identity" for n in free)
    return ModelSpec(
        name="linear-gaussian", d=1, d_y=1, param_names=free,
        fixed={k: v for k, v in p.items() if k not in free},
        transform=ParamTransform(flags),
        priors=_default_priors(free, flags, p, priors, sd=1.0),
        drift=_lg_drift, diffusion=_lg_diffusion, zeta1=None, zeta2=None,
        log_obs=_scalar_gauss_log_obs, x0=[p["x0"]], obs_sampler=_scalar_gauss_obs,
        truth=p,
    )


def kalman_loglik(params, data: Dataset, level: Optional[int] = None) -> np.ndarray:
    """Exact log-likelihood of a scalar linear-Gaussian SDE observed in noise.

    ``params`` maps ``A, B, sigma, obs_sd, x0`` to floats or broadcastable
    arrays (for grids).  ``level=None`` uses the exact continuous-time
    transition; otherwise the Euler chain with ``2**level`` steps per unit.
    """
    p = _as_p(params)
    A, B, sig, tau = (np.asarray(p[k], dtype=float) for k in ("A", "B", "sigma", "obs_sd"))
    m = np.asarray(p.get("x0", 0.0), dtype=float) + 0.0 * (A + B + sig + tau)
    P = np.zeros_like(m)
    if level is None:
        F = np.exp(A)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(A == 0, 1.0, np.expm1(A) / A)
            q = np.where(A == 0, 1.0, np.expm1(2 * A) / (2 * A))
        steps, shift, Q = 1, B * c, sig ** 2 * q
    else:
        dt = 2.0 ** -level
        F, steps, shift, Q = 1.0 + A * dt, 2 ** level, B * dt, sig ** 2 * dt
    ll = np.zeros_like(m)
    for y in data.observations[:, 0]:
        for _ in range(steps):
            m = F * m + shift
            P = F * F * P + Q
        S = P + tau ** 2
        if np.any(S <= 0):
            raise SingularError("innovation variance is not positive")
        ll = ll - 0.5 * (LOG_2PI + np.log(S) + (y - m) ** 2 / S)
        K = P / S
        m = m + K * (y - m)
        P = (1.0 - K) * P
    return ll if ll.ndim else float(ll)


def ou_limit_params(p: dict) -> dict:
    """Linear-Gaussian system followed by one OU particle in the mean-field limit.

    The law mean stays at m0 (also under Euler), so X is linear in itself.
    """
    return {"A": -np.asarray(p["pull"]), "B": np.asarray(p["pull"]) * p["m0"],
            "sigma": p["sigma"], "obs_sd": p["obs_sd"], "x0": p["m0"]}


def linear_loglik_fn(model: ModelSpec, level: Optional[int] = None):
    """theta-grid -> exact log-likelihood, for the two verification models."""
    def fn(grids: dict, data: Dataset):
        p = dict(model.fixed)
        p.update(grids)
        if model.name == "ou-meanfield":
            p = ou_limit_params(p)
        return kalman_loglik(p, data, level)
    if model.name not in ("ou-meanfield", "linear-gaussian"):
        raise DomainError(f"no exact likelihood for {model.name}")
    return fn


def grid_posterior(model: ModelSpec, data: Dataset, level: Optional[int] = None,
                   n_grid: int = 2001, width: float = 6.0) -> dict:
    """Posterior moments by quadrature on a grid over the unconstrained scale.

    Returns ``{"mean": ..., "sd": ...}`` (natural scale) per free parameter.
    The grid spans ``width`` prior standard deviations around the prior mean
    in each coordinate; at most two free coordinates are supported.
    """
    from .core import log_prior_density  # local: keeps import graph flat

    if model.d_theta > 2:
        raise DomainError("grid quadrature supports at most two parameters")
    if model.d_theta == 2:
        n_grid = min(n_grid, 401)
    axes = [np.linspace(pr.mean - width * pr.sd, pr.mean + width * pr.sd, n_grid) for pr in model.priors]
    mesh = np.meshgrid(*axes, indexing="ij")
    nat = [np.exp(v) if f == "log" else v for v, f in zip(mesh, model.transform.flags)]
    ll = linear_loglik_fn(model, level)(dict(zip(model.param_names, nat)), data)
    # density on the unconstrained scale: prior there is Gaussian, no Jacobian
    lp = sum(pr.logpdf(v) for pr, v in zip(model.priors, mesh))
    logw = ll + lp
    w = np.exp(logw - logw.max())
    w /= w.sum()
    out = {}
    for name, v in zip(model.param_names, nat):
        mean = float(np.sum(w * v))
        out[name] = {"mean": mean, "sd": float(np.sqrt(np.sum(w * (v - mean) ** 2)))}
    return out


# ----------------------------------------------------------- registry ---

_PARAM_TYPES = {
    "neuron3d": (NeuronParams, neuron3d_spec),
    "ou-meanfield": (OUMeanFieldParams, ou_meanfield_spec),
    "linear-gaussian": (LinearGaussianParams, linear_gaussian_spec),
}

MODEL_NAMES = tuple(_PARAM_TYPES)


def make_model(name: str, params: Optional[dict] = None, free: Optional[Sequence[str]] = None,
               priors: Optional[dict] = None) -> ModelSpec:
    """Build a registered model from JSON-style overrides."""
    if name not in _PARAM_TYPES:
        raise ConfigError(f"unknown model {name!r}; registered: {', '.join(MODEL_NAMES)}")
    ptype, build = _PARAM_TYPES[name]
    try:
        p = ptype(**(params or {}))
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name}: {exc}") from None
    kwargs = {"priors": priors}
    if free is not None:
        unknown = set(free) - set(p.as_dict())
        if unknown:
            raise ConfigError(f"unknown free parameters {sorted(unknown)} for {name}")
        kwargs["free"] = tuple(free)
    return build(p, **kwargs)
