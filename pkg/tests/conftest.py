import numpy as np
import pytest
from hypothesis import settings

from mvpmcmc.core import Dataset, Kernel, ModelSpec, NormalPrior, ParamTransform
from mvpmcmc.models import gaussian_logpdf_diag

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def toy_model(drift=None, diffusion=None, zeta1=None, zeta2=None, log_obs=None, d=1, x0=0.0,
              names=("a",), flags=("identity",), fixed=None, obs_sd=1.0, init_sampler=None):
    """Minimal ModelSpec with overridable pieces; defaults to a ≡ 0, b ≡ I."""
    if drift is None:
        drift = lambda p, x, zb: np.zeros_like(x)
    if diffusion is None:
        diffusion = lambda p, x, zb: np.broadcast_to(np.eye(d), (x.shape[0], d, d))
    if log_obs is None:
        log_obs = lambda p, x, y: gaussian_logpdf_diag(x, y, (obs_sd,) * d)
    return ModelSpec(
        name="toy", d=d, d_y=d, param_names=names, fixed=dict(fixed or {}),
        transform=ParamTransform(flags), priors=tuple(NormalPrior() for _ in names),
        drift=drift, diffusion=diffusion, zeta1=zeta1, zeta2=zeta2, log_obs=log_obs,
        x0=np.full(d, x0), init_sampler=init_sampler,
        obs_sampler=lambda p, x, s: x + obs_sd * s.gen.standard_normal(x.shape),
    )


MEAN_KERNEL = Kernel(lambda p, x, z: np.broadcast_to(z[:, 0], (x.shape[0], z.shape[0])),
                     (lambda p, x: np.ones(x.shape[0]), lambda p, z: z[:, 0]), "z")


@pytest.fixture
def toy():
    return toy_model


@pytest.fixture
def small_data():
    return Dataset(np.array([0.1, -0.3, 0.4, 0.2, 0.0]))


def batch_se(x, n_batches=20):
    """Batch-means standard error of the mean of a correlated series."""
    x = np.asarray(x, dtype=float)
    b = len(x) // n_batches
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
