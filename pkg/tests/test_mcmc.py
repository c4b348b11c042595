import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mvpmcmc.core import Dataset, NormalPrior, ParamTransform, ParamVector, param_functional
from mvpmcmc.errors import ChainAborted, ConfigError
from mvpmcmc.harness import generate_data
from mvpmcmc.mcmc import (ChainConfig, ProposalConfig, log_proposal_jacobian, mh_log_accept, propose,
                          run_bilevel_chain, run_pmcmc_chain)
from mvpmcmc.models import make_model
from mvpmcmc.multilevel import correction_terms
from mvpmcmc.rng import StreamKey

from conftest import batch_se, toy_model

ZERO_B = lambda p, x, zb: np.zeros((x.shape[0], x.shape[1], x.shape[1]))
DATA = Dataset(np.array([[0.3], [-0.2], [0.5]]))


def cfg(K=50, level=1, scales=(0.5,), **kw):
    return ChainConfig(K=K, level=level, N=5, M=kw.pop("M", 20), proposal=ProposalConfig(scales), **kw)


def with_priors(model, *priors):
    return dataclasses.replace(model, priors=tuple(priors))


class FakeStream:
    def __init__(self, z):
        self.gen = self
        self.z = np.asarray(z, dtype=float)

    def standard_normal(self, n):
        return self.z[:n]


def test_propose_examples():
    ident, logt = ParamTransform(("identity",)), ParamTransform(("log",))
    assert propose(ParamVector([0.0], ("a",)), ProposalConfig((1.0,)), ident, FakeStream([0.3]))[0] == 0.3
    assert propose(ParamVector([1.0], ("a",)), ProposalConfig((1.0,)), logt, FakeStream([0.0]))[0] == 1.0


@given(st.floats(1e-6, 1e6), st.floats(-1e6, 1e6), st.integers(0, 2 ** 32))
def test_zero_step_proposal_is_identity(pos, free, seed):
    t = ParamTransform(("log", "identity"))
    th = ParamVector([pos, free], ("a", "b"))
    out = propose(th, ProposalConfig((0.0, 0.0)), t, StreamKey(seed).stream())
    assert np.array_equal(out.values, th.values)


def test_proposal_config_rejects_negative():
    with pytest.raises(ConfigError):
        ProposalConfig((-0.1,))


def test_mh_examples():
    assert mh_log_accept(1.0, 2.0, 3.0, 3.0, 1.0, 2.0) == 1.0
    assert mh_log_accept(-np.log(2), 0.0, 0.0, 0.0, 0.0, 0.0) == pytest.approx(0.5, rel=1e-15)
    assert mh_log_accept(5.0, 0.0, 0.0, 0.0, 0.0, 0.0) == 1.0
    assert mh_log_accept(-np.inf, 0.0, 0.0, 0.0, 0.0, 0.0) == 0.0
    assert mh_log_accept(0.0, -np.inf, 0.0, 0.0, 0.0, 0.0) == 0.0


@given(*[st.floats(-50, 50)] * 6, st.floats(-1e3, 1e3))
def test_mh_shift_invariance(a, b, c, d, e, f, shift):
    assert mh_log_accept(a + shift, b, c, d, e + shift, f) == pytest.approx(
        mh_log_accept(a, b, c, d, e, f), rel=1e-9, abs=1e-12)


def test_log_proposal_jacobian():
    t = ParamTransform(("log", "identity", "log"))
    assert log_proposal_jacobian([2.0, -5.0, 3.0], t) == pytest.approx(-np.log(6.0))


def test_chain_config_validation():
    for bad in (dict(K=0), dict(burn_in=50), dict(burn_in=-1)):
        with pytest.raises(ConfigError):
            cfg(**{"K": 50, **bad})


def test_zero_step_chain_is_constant():
    m = toy_model(drift=lambda p, x, zb: p["a"] + 0 * x, diffusion=ZERO_B)
    ch = run_pmcmc_chain(m, DATA, cfg(scales=(0.0,)), StreamKey(3))
    assert np.all(ch.thetas == ch.thetas[0])
    # the filter is deterministic here, so repeated estimates agree and every step accepts
    assert ch.acceptance_rate() == 1.0
    assert np.all(ch.log_liks == ch.log_liks[0])


def test_zero_step_chain_constant_with_random_likelihood():
    m = make_model("ou-meanfield")
    ch = run_pmcmc_chain(m, DATA, cfg(K=30, level=2, scales=(0.0, 0.0), theta0=(1.0, 0.5)), StreamKey(1))
    assert np.all(ch.thetas == [1.0, 0.5])


def test_constant_target_accepts_everything():
    m = toy_model(log_obs=lambda p, x, y: np.full(x.shape[0], -0.7))
    m = with_priors(m, NormalPrior(0.0, 1e12))
    ch = run_pmcmc_chain(m, DATA, cfg(K=200, scales=(2.0,)), StreamKey(5))
    assert ch.accepted.all()


def test_rejection_preserves_state():
    m = make_model("ou-meanfield")
    ch = run_pmcmc_chain(m, DATA, cfg(K=200, level=2, scales=(0.8, 0.8), theta0=(1.0, 0.5)), StreamKey(2))
    rej = np.flatnonzero(~ch.accepted[1:]) + 1
    assert 0 < len(rej) < 200
    for k in rej:
        assert np.array_equal(ch.thetas[k], ch.thetas[k - 1])
        assert ch.log_liks[k] == ch.log_liks[k - 1]
        assert np.array_equal(ch.trajectories[k], ch.trajectories[k - 1])


def test_support_respected():
    m = make_model("ou-meanfield")
    ch = run_pmcmc_chain(m, DATA, cfg(K=150, level=1, scales=(2.0, 2.0)), StreamKey(4))
    assert np.all(ch.thetas > 0)


def test_chain_is_pure_function_of_key():
    m = make_model("ou-meanfield")
    c = cfg(K=20, level=2, scales=(0.3, 0.3))
    a, b = run_pmcmc_chain(m, DATA, c, StreamKey(8)), run_pmcmc_chain(m, DATA, c, StreamKey(8))
    assert np.array_equal(a.thetas, b.thetas) and np.array_equal(a.log_liks, b.log_liks)
    assert not np.array_equal(a.thetas, run_pmcmc_chain(m, DATA, c, StreamKey(9)).thetas)


def test_two_point_target_frequencies():
    # g is three times larger for a > 0 and the prior is symmetric: P(a > 0) = 3/4
    m = toy_model(log_obs=lambda p, x, y: np.full(x.shape[0], np.log(3.0) if p["a"] > 0 else 0.0))
    ch = run_pmcmc_chain(m, Dataset([[0.0]]), cfg(K=10000, level=0, scales=(2.5,), M=1), StreamKey(6))
    pos = (ch.thetas[1:, 0] > 0).astype(float)
    assert abs(pos.mean() - 0.75) < 3 * batch_se(pos)


def test_failures_are_rejections_then_abort():
    def log_obs(p, x, y):
        return np.full(x.shape[0], 0.0 if abs(p["a"]) < 0.1 else -np.inf)

    m = toy_model(log_obs=log_obs)
    ch = run_pmcmc_chain(m, DATA, cfg(K=30, scales=(0.001,), theta0=(0.0,)), StreamKey(1))
    assert ch.failures == 0
    with pytest.raises(ChainAborted):
        run_pmcmc_chain(m, DATA, cfg(K=100, scales=(50.0,), theta0=(0.0,)), StreamKey(1))


def test_failure_counted_without_abort():
    def log_obs(p, x, y):
        return np.full(x.shape[0], 0.0 if p["a"] < 0.5 else -np.inf)

    m = toy_model(log_obs=log_obs)
    ch = run_pmcmc_chain(m, DATA, cfg(K=100, scales=(0.3,), theta0=(0.0,)), StreamKey(2))
    assert ch.failures > 0 and np.all(ch.thetas < 0.5)
    assert ch.failure_log[0]["time_step"] == 1


def test_prior_initialisation_retries():
    m = toy_model(log_obs=lambda p, x, y: np.full(x.shape[0], 0.0 if p["a"] > 0 else -np.inf))
    ch = run_pmcmc_chain(m, DATA, cfg(K=5, scales=(0.1,)), StreamKey(11))
    assert ch.thetas[0, 0] > 0 and ch.init_draws >= 1


def test_bilevel_needs_level_one():
    with pytest.raises(ConfigError):
        run_bilevel_chain(toy_model(), DATA, cfg(level=0), StreamKey(1))


def test_bilevel_zero_step_and_degenerate_coupling():
    m = toy_model(drift=lambda p, x, zb: np.zeros_like(x), diffusion=ZERO_B)
    ch = run_bilevel_chain(m, DATA, cfg(K=20, level=3, scales=(0.0,)), StreamKey(2))
    assert np.all(ch.thetas == ch.thetas[0]) and ch.acceptance_rate() == 1.0
    assert np.array_equal(ch.trajectories, ch.coarse_trajectories)
    lw_f, lw_c, _, _ = correction_terms(ch, m, DATA, param_functional(m, "a"))
    assert np.all(lw_f == 0.0) and np.all(lw_c == 0.0)


def test_bilevel_records_coupled_samples():
    m = make_model("ou-meanfield")
    ch = run_bilevel_chain(m, DATA, cfg(K=10, level=2, scales=(0.2, 0.2), theta0=(1.0, 0.5)), StreamKey(3))
    s = ch[4]
    assert s.fine_trajectory.shape == s.coarse_trajectory.shape == (3, 1)
    assert len(ch[2:5]) == 3 and len(list(ch)) == 11


def test_bilevel_fine_marginal_matches_single_level():
    m = make_model("ou-meanfield")
    truth = m.true_theta()
    data = generate_data(m, truth, 5, StreamKey(21), sim_level=6, sim_N=500)
    base = dict(K=1500, level=3, N=20, M=20, proposal=ProposalConfig((0.35, 0.35)), theta0=tuple(truth.values))
    single = run_pmcmc_chain(m, data, ChainConfig(**base), StreamKey(1))
    coupled = run_bilevel_chain(m, data, ChainConfig(**base), StreamKey(2))
    burn = 150
    a = single.thetas[burn:, 0]
    lw_f, _, phi_f, _ = correction_terms(coupled, m, data, param_functional(m, "pull"), burn)
    w = np.exp(lw_f - lw_f.max())
    weighted = np.sum(w * phi_f) / np.sum(w)
    # Ȟ weights lie in (0, 2)^T, so the batch-means error of the weighted ratio is close to the plain one
    se = np.hypot(batch_se(a), batch_se(phi_f * w / w.mean()))
    assert abs(weighted - a.mean()) < 3 * se
