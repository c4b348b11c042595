import numpy as np
import pytest
from hypothesis import given, strategies as st

from mvpmcmc.core import LOG_2PI, Dataset, EmpiricalMeasure, eval_interaction
from mvpmcmc.errors import ConfigError, DomainError
from mvpmcmc.harness import generate_data
from mvpmcmc.laws import inert_laws, propagate_law_block, sample_transition_path
from mvpmcmc.models import (MODEL_NAMES, NeuronParams, b32, grid_posterior, kalman_loglik, make_model,
                            neuron_diffusion, neuron_drift, neuron_obs_logdensity)
from mvpmcmc.rng import StreamKey

P = NeuronParams()
SIG = 1.0 / (1.0 + np.exp(0.4))  # gate sigmoid at x1 = 0 with the default lam and V_T


def test_registry():
    assert set(MODEL_NAMES) == {"neuron3d", "ou-meanfield", "linear-gaussian"}
    with pytest.raises((ConfigError, DomainError)):
        make_model("nope")


def test_neuron_drift_example():
    x = np.array([0.0, 0.5, 0.3])
    out = neuron_drift(P, x, EmpiricalMeasure(x[None]))
    assert out == pytest.approx([0.3, 0.024, 0.7 * SIG - 0.3], abs=1e-12)
    assert out[2] == pytest.approx(-0.0191, abs=1e-4)


def test_neuron_drift_decoupled_when_J_zero():
    p = NeuronParams(J=0.0)
    x = np.array([0.4, -0.2, 0.6])
    a = neuron_drift(p, x, EmpiricalMeasure([[0, 0, 0.1]]))
    b = neuron_drift(p, x, EmpiricalMeasure([[5, 1, 0.9], [2, 2, 0.3]]))
    assert np.array_equal(a, b)


def test_neuron_gate_saturates():
    p = NeuronParams(lam=50.0)
    out = neuron_drift(p, np.array([10.0, 0.0, 1.0]), EmpiricalMeasure([[0, 0, 0.0]]))
    assert out[2] == pytest.approx(-p.a_d, abs=1e-12)


def test_neuron_diffusion_example():
    x = np.array([0.0, 0.5, 0.5])
    B = neuron_diffusion(P, x, EmpiricalMeasure(x[None]))
    expect = np.zeros((3, 3))
    expect[0, 0] = 0.5
    expect[0, 2] = 0.1
    # the gate term carries (1 - x3) = 0.5 at this point
    expect[2, 1] = np.sqrt(0.5 * SIG + 0.5) * 0.1 * np.exp(-0.5)
    assert np.allclose(B, expect, atol=1e-12, rtol=0)


def test_b32_outside_and_boundary():
    for x3 in (1.2, -0.1, 0.0, 1.0):
        assert b32(P.as_dict(), np.array([0.0, 0.0, x3]))[0] == 0.0
    for x3 in (1e-4, 1 - 1e-4):
        assert abs(b32(P.as_dict(), np.array([0.0, 0.0, x3]))[0]) < 1e-6


@given(st.floats(1e-3, 1 - 1e-3), st.floats(-3, 3))
def test_b32_continuous_inside(x3, x1):
    p = P.as_dict()
    h = 1e-9
    a = b32(p, np.array([x1, 0.0, x3]))[0]
    b = b32(p, np.array([x1, 0.0, x3 + h]))[0]
    assert abs(a - b) < 1e-5


@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1)), min_size=1, max_size=10),
       st.floats(-2, 2), st.floats(0.01, 0.99))
def test_neuron_depends_on_measure_only_through_mean_z3(atoms, x1, x3):
    z = np.array(atoms)
    x = np.array([x1, 0.1, x3])
    single = EmpiricalMeasure([[0.0, 0.0, z[:, 2].mean()]])
    assert np.allclose(neuron_drift(P, x, EmpiricalMeasure(z)), neuron_drift(P, x, single), rtol=1e-12, atol=1e-12)
    assert np.allclose(neuron_diffusion(P, x, EmpiricalMeasure(z)), neuron_diffusion(P, x, single),
                       rtol=1e-12, atol=1e-12)


def test_neuron_obs_examples():
    sds = np.array([0.2, 0.1, 0.02])
    mode = -np.sum(np.log(sds * np.sqrt(2 * np.pi)))
    x = np.array([0.1, 0.2, 0.3])
    assert neuron_obs_logdensity(P, x, x) == pytest.approx(mode, abs=1e-12)
    assert neuron_obs_logdensity(P, x, x + [0.2, 0, 0]) == pytest.approx(mode - 0.5, abs=1e-12)
    with pytest.raises(DomainError):
        neuron_obs_logdensity(NeuronParams(sigma2=0.0), x, x)


def test_neuron_obs_density_normalised():
    # importance estimate of P(y1 > x1) under a wider proposal reproduces 1/2
    rng = np.random.default_rng(3)
    x = np.array([0.1, 0.2, 0.3])
    n = 10 ** 5
    prop_sd = np.array([0.4, 0.2, 0.04])
    y = x + prop_sd * rng.standard_normal((n, 3))
    logq = -0.5 * np.sum(((y - x) / prop_sd) ** 2, axis=1) - np.sum(np.log(prop_sd)) - 1.5 * LOG_2PI
    logp = neuron_obs_logdensity(P, x, y)
    w = np.exp(logp - logq) * (y[:, 0] > x[0])
    assert abs(w.mean() - 0.5) < 3 * w.std() / np.sqrt(n)


def test_neuron_cloud_stays_finite():
    m = make_model("neuron3d")
    p = m.bind(m.true_theta())
    path = propagate_law_block(m, p, m.initial_cloud(p, 200, StreamKey(1).stream()), 4, StreamKey(2).stream())
    assert np.all(np.isfinite(path.end_particles))


def test_ou_interaction_is_cloud_mean():
    m = make_model("ou-meanfield")
    p = m.bind(m.true_theta())
    z = np.array([[0.3], [-1.2], [2.0]])
    assert eval_interaction(m.zeta1, p, np.zeros((2, 1)), z) == pytest.approx(z.mean(), abs=1e-15)


def test_ou_without_pull_is_scaled_brownian_motion():
    m = make_model("ou-meanfield", params={"pull": 0.0}, free=("sigma",))
    p = m.bind([0.5])
    init = np.zeros((5, 1))
    path = propagate_law_block(m, p, init, 3, StreamKey(4).stream())
    assert np.allclose(path.end_particles, 0.5 * path.noise.sum(axis=0), atol=1e-14)


def test_kalman_scalar_example():
    p = {"A": 0.0, "B": 0.0, "sigma": 1.0, "obs_sd": 1.0, "x0": 0.0}
    expect = -0.5 * (LOG_2PI + np.log(2.0))
    assert kalman_loglik(p, Dataset([[0.0]])) == pytest.approx(expect, abs=1e-14)
    assert kalman_loglik(p, Dataset([[0.0]]), level=3) == pytest.approx(expect, abs=1e-14)


def test_kalman_flat_in_uninformative_limit():
    p = {"A": -0.5, "B": 0.1, "sigma": 1.0, "obs_sd": 1e8, "x0": 0.0}
    a = kalman_loglik(p, Dataset([[0.0], [0.0]]))
    b = kalman_loglik(p, Dataset([[5.0], [-3.0]]))
    assert abs(a - b) < 1e-12


def test_kalman_matches_brute_force_simulation():
    m = make_model("linear-gaussian")
    theta = m.true_theta()
    p = m.bind(theta)
    data = generate_data(m, theta, 3, StreamKey(7), sim_level=5)
    l, n = 3, 10 ** 5
    x = np.full((n, 1), p.get("x0", 0.0))
    logw = np.zeros(n)
    s = StreamKey(8).stream()
    for t, law in enumerate(inert_laws(m, l, data.T)):
        x, _ = sample_transition_path(m, p, x, law, s)
        logw += m.log_obs(p, x, data.observations[t])
    w = np.exp(logw - logw.max())
    est = np.log(w.mean()) + logw.max()
    se_log = w.std() / w.mean() / np.sqrt(n)
    assert abs(est - kalman_loglik(p, data, level=l)) < 3 * se_log


def test_grid_posterior_is_normalised_and_centred():
    m = make_model("linear-gaussian")
    theta = m.true_theta()
    data = generate_data(m, theta, 20, StreamKey(2), sim_level=8)
    post = grid_posterior(m, data)["B"]
    assert post["sd"] > 0 and np.isfinite(post["mean"])
    assert abs(post["mean"] - theta["B"]) < 4 * post["sd"]
