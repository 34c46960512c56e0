"""Noise schedule, forward noising and the deterministic sampler."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uknowpan.diffusion import X0_CLIP, ddim_step, make_schedule, q_sample, sample
from uknowpan.errors import ConfigError, ContractError, NumericError
from uknowpan.tensor import Tensor


def test_schedule_matches_cumulative_product_loop():
    s = make_schedule(500, 1e-4, 0.02, 25)
    acc, expected = 1.0, []
    for i in range(500):
        beta = 1e-4 + (0.02 - 1e-4) * i / 499
        acc *= 1.0 - beta
        expected.append(acc)
    np.testing.assert_allclose(s.alpha_bar, expected, rtol=1e-12)
    assert s.beta[0] == 1e-4 and s.beta[-1] == pytest.approx(0.02)


def test_default_schedule_strides_by_twenty():
    s = make_schedule()
    assert s.T == 500
    assert s.ddim_steps == tuple(range(20, 501, 20))
    assert len(s.ddim_steps) == 25


def test_abar_at_zero_is_one():
    s = make_schedule()
    assert s.abar(0) == 1.0
    assert s.abar(1) == pytest.approx(1 - 1e-4)
    with pytest.raises(ContractError):
        s.abar(501)


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02, 1), (10, 1e-4, 0.02, 11), (10, 0.5, 0.1, 2), (10, 1e-4, 1.0, 2)])
def test_schedule_rejects_bad_settings(args):
    with pytest.raises(ConfigError):
        make_schedule(*args)


def test_q_sample_closed_form(rng):
    s = make_schedule()
    x0 = rng.standard_normal((3, 2, 4, 4))
    eps = rng.standard_normal(x0.shape)
    t = np.array([1, 250, 500])
    out = q_sample(x0, t, eps, s)
    for i, ti in enumerate(t):
        ab = s.alpha_bar[ti - 1]
        np.testing.assert_allclose(out[i], math.sqrt(ab) * x0[i] + math.sqrt(1 - ab) * eps[i], atol=1e-14)
    with pytest.raises(ContractError):
        q_sample(x0, np.array([0, 1, 2]), eps, s)


def test_q_sample_keeps_tensors_differentiable(rng):
    s = make_schedule()
    x0 = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    out = q_sample(x0, np.array([10, 20]), np.zeros((2, 3)), s)
    out.sum().backward()
    np.testing.assert_allclose(x0.grad[0], math.sqrt(s.abar(10)))


def test_ddim_step_with_true_x0_stays_on_trajectory(rng):
    s = make_schedule()
    x0 = rng.standard_normal(8)
    eps = rng.standard_normal(8)
    x_t = q_sample(x0, 300, eps, s)
    x_prev = ddim_step(x_t, x0, 300, 280, s)
    np.testing.assert_allclose(x_prev, q_sample(x0, 280, eps, s), atol=1e-12)
    np.testing.assert_array_equal(ddim_step(x_t, x0, 20, 0, s), x0)
    with pytest.raises(ContractError):
        ddim_step(x_t, x0, 20, 20, s)


def test_oracle_denoiser_reproduces_hrms(small_scenes):
    s = make_schedule()
    d = small_scenes
    x0 = 2.0 * (d.hrms - d.lrms_up)
    calls = []

    def oracle(x, pan, up, t):
        calls.append(t)
        return x0

    out = sample(oracle, d.pan, d.lrms_up, s, seed=7, residual_scale=2.0)
    assert np.max(np.abs(out - d.hrms)) <= 1e-8
    assert calls == list(s.ddim_steps[::-1])


def test_sampler_is_deterministic_and_seed_dependent(small_scenes):
    s = make_schedule(100, 1e-4, 0.02, 5)
    d = small_scenes
    blurry = lambda x, pan, up, t: 0.5 * x  # output depends on the starting noise
    a = sample(blurry, d.pan, d.lrms_up, s, seed=7)
    b = sample(blurry, d.pan, d.lrms_up, s, seed=7)
    c = sample(blurry, d.pan, d.lrms_up, s, seed=8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sampler_returns_last_uncertainty(small_scenes):
    s = make_schedule(100, 1e-4, 0.02, 4)
    d = small_scenes
    seen = []

    def model(x, pan, up, t):
        theta = np.full(x.shape, float(t))
        seen.append(t)
        return np.zeros(x.shape), theta

    _, theta = sample(model, d.pan, d.lrms_up, s, 0, return_uncertainty=True)
    assert np.all(theta == seen[-1]) and seen[-1] == s.ddim_steps[0]


def test_sampler_clips_x0(small_scenes):
    s = make_schedule(100, 1e-4, 0.02, 2)
    d = small_scenes
    out = sample(lambda x, p, u, t: np.full(x.shape, 50.0), d.pan, d.lrms_up, s, 0, residual_scale=2.0)
    np.testing.assert_allclose(out, d.lrms_up + X0_CLIP / 2.0)


def test_sampler_rejects_non_finite(small_scenes):
    s = make_schedule(100, 1e-4, 0.02, 2)
    d = small_scenes
    with pytest.raises(NumericError):
        sample(lambda x, p, u, t: np.full(x.shape, np.nan), d.pan, d.lrms_up, s, 0)


@given(st.integers(1, 499), st.integers(0, 2**32 - 1))
def test_ddim_step_inverts_noising_property(t, seed):
    s = make_schedule()
    r = np.random.default_rng(seed)
    x0, eps = r.standard_normal(5), r.standard_normal(5)
    x_t = q_sample(x0, t + 1, eps, s)
    np.testing.assert_allclose(ddim_step(x_t, x0, t + 1, t, s), q_sample(x0, t, eps, s), atol=1e-10)


@given(st.integers(1, 500))
def test_alpha_bar_monotone_in_unit_interval(n):
    s = make_schedule(n, 1e-4, 0.02, 1)
    assert np.all(np.diff(s.alpha_bar) < 0) and 0 < s.alpha_bar[-1] < 1


def test_q_sample_variance_matches_schedule():
    s = make_schedule()
    eps = np.random.default_rng(0).standard_normal(20_000)
    for t in (1, 100, 500):
        var = float(np.var(q_sample(np.zeros_like(eps), t, eps, s)))
        assert var == pytest.approx(1 - s.abar(t), rel=0.05)
