# -*- coding: utf-8 -*-
import numpy as np
import pytest
from core.schedule import GuidanceConfig, NoiseSchedule, cfg_combine, ddpm_step, euler_sample,\
    euler_sigmas, forward_noise, guided_eps, sample
from core.tensor import Tensor, ShapeError


class CountingDenoiser:
    """Returns the caption tensor as epsilon and counts the calls."""

    def __init__(self):
        self.calls = []

    def __call__(self, x_t, f_lq, t, c, store):
        self.calls.append((np.array(t), c))
        return Tensor(np.full(x_t.shape, float(c.data.mean()), dtype=np.float32))


def gaussian_oracle(schedule, mean, spread):
    """
    Exact epsilon for data drawn from N(mean, spread^2) element-wise, given the
    variance-preserving input the sampler hands to the denoiser.
    """
    def denoiser(x_in, _f_lq, t, _c, _store):
        sigma = schedule.sigma_at(t).reshape((-1,) + (1,) * (x_in.ndim - 1))
        x = x_in.data.astype(np.float64) * np.sqrt(sigma ** 2 + 1.0)
        return Tensor(sigma * (x - mean) / (spread ** 2 + sigma ** 2))
    return denoiser


@pytest.mark.parametrize('timesteps', [50, 100, 1000])
def test_schedule_tables_hold_their_invariants(timesteps):
    schedule = NoiseSchedule(timesteps)
    assert schedule.validate()
    assert schedule.sigmas[0] == 0.0
    assert np.all(np.diff(schedule.alpha_bars) < 0)
    np.testing.assert_allclose(np.cumprod(schedule.alphas), schedule.alpha_bars, rtol=1e-12)
    assert schedule.alpha_bars[-1] < 0.01


def test_schedule_rejects_bad_ranges():
    with pytest.raises(ValueError):
        NoiseSchedule(0)
    with pytest.raises(ValueError):
        NoiseSchedule(10, beta_min=0.0)
    with pytest.raises(ValueError):
        NoiseSchedule.from_alpha_bars([0.9, 0.95], [0, 1])


def test_respaced_schedule_keeps_end_points():
    schedule = NoiseSchedule(100)
    respaced = schedule.respace(10)
    assert respaced.timesteps == 10
    assert respaced.model_timesteps[0] == 0
    assert respaced.model_timesteps[-1] == 99
    assert respaced.alpha_bars[-1] == schedule.alpha_bars[-1]
    assert respaced.validate()
    with pytest.raises(ValueError):
        schedule.respace(0)


def test_forward_noise_mixes_by_alpha_bar(rng):
    schedule = NoiseSchedule(50)
    x0 = rng.standard_normal((2, 3)).astype(np.float64)
    eps = rng.standard_normal((2, 3)).astype(np.float64)
    out = forward_noise(x0, eps, 7, schedule).data
    expected = np.sqrt(schedule.alpha_bars[7]) * x0 + np.sqrt(1 - schedule.alpha_bars[7]) * eps
    np.testing.assert_allclose(out, expected, rtol=1e-5, atol=1e-6)

    per_item = forward_noise(x0, eps, np.array([0, 49]), schedule).data
    np.testing.assert_allclose(per_item[1], np.sqrt(schedule.alpha_bars[49]) * x0[1]
                               + np.sqrt(1 - schedule.alpha_bars[49]) * eps[1], rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize('t', [-1, 50, 2.5])
def test_forward_noise_rejects_bad_steps(t):
    with pytest.raises(ValueError):
        forward_noise(np.zeros(3), np.zeros(3), t, NoiseSchedule(50))


def test_forward_noise_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        forward_noise(np.zeros(3), np.zeros(4), 1, NoiseSchedule(50))


def test_ddpm_steps_with_exact_epsilon_recover_x0(rng):
    schedule = NoiseSchedule(50)
    x0 = rng.standard_normal((1, 4, 4, 4))
    eps = rng.standard_normal((1, 4, 4, 4))
    x = forward_noise(x0, eps, 49, schedule)
    zero = np.zeros_like(x0)
    for t in range(49, -1, -1):
        ab = schedule.alpha_bars[t]
        eps_hat = (x.data - np.sqrt(ab) * x0) / np.sqrt(1 - ab)
        x = ddpm_step(x, eps_hat, t, zero, schedule)
    np.testing.assert_allclose(x.data, x0, atol=1e-3)


def test_ddpm_step_last_step_adds_no_noise(rng):
    schedule = NoiseSchedule(50)
    x = rng.standard_normal((2, 2))
    eps_hat = rng.standard_normal((2, 2))
    quiet = ddpm_step(x, eps_hat, 0, np.zeros((2, 2)), schedule).data
    noisy = ddpm_step(x, eps_hat, 0, np.ones((2, 2)) * 5, schedule).data
    np.testing.assert_array_equal(quiet, noisy)


def test_cfg_combine_is_exact_at_zero_and_one(rng):
    cond = rng.standard_normal((2, 3)).astype(np.float32)
    uncond = rng.standard_normal((2, 3)).astype(np.float32)
    np.testing.assert_array_equal(cfg_combine(cond, uncond, 1).data, cond)
    np.testing.assert_array_equal(cfg_combine(cond, uncond, 0).data, uncond)
    np.testing.assert_allclose(cfg_combine(cond, uncond, 3.0).data, uncond + 3.0 * (cond - uncond),
                               rtol=1e-5, atol=1e-6)
    with pytest.raises(ShapeError):
        cfg_combine(cond, uncond[:1], 2.0)


def test_cfg_combine_is_affine_in_the_scale(rng):
    cond = rng.standard_normal((2, 3))
    uncond = rng.standard_normal((2, 3))
    average = (cfg_combine(cond, uncond, 5.0).data + cfg_combine(cond, uncond, -3.0).data) / 2
    np.testing.assert_allclose(average, cond, atol=1e-6)
    scalar = cfg_combine(np.array([1.0]), np.array([0.5]), 5.0).data
    assert scalar[0] == pytest.approx(3.0)


def test_guidance_scale_one_runs_only_the_conditional_pass():
    denoiser = CountingDenoiser()
    x = Tensor(np.zeros((2, 1, 2, 2)))
    c = Tensor(np.ones((2, 3, 4)))
    guidance = GuidanceConfig(1.0, Tensor(np.zeros((1, 3, 4))))
    eps = guided_eps(denoiser, x, None, 5, c, guidance)
    assert len(denoiser.calls) == 1
    np.testing.assert_array_equal(eps.data, 1.0)


def test_guidance_mixes_conditional_and_null_caption():
    denoiser = CountingDenoiser()
    x = Tensor(np.zeros((2, 1, 2, 2)))
    c = Tensor(np.ones((2, 3, 4)))
    guidance = GuidanceConfig(4.0, Tensor(np.zeros((1, 3, 4))))
    eps = guided_eps(denoiser, x, None, 5, c, guidance)
    assert len(denoiser.calls) == 2
    assert denoiser.calls[1][1].shape == (2, 3, 4)
    np.testing.assert_allclose(eps.data, 4.0)
    with pytest.raises(ValueError):
        GuidanceConfig(float('nan'), c)


def test_euler_sigmas_descend_to_zero():
    timesteps, sigmas = euler_sigmas(NoiseSchedule(100), 8)
    assert len(timesteps) == 8
    assert len(sigmas) == 9
    assert sigmas[-1] == 0.0
    assert np.all(np.diff(sigmas) < 0)


def test_euler_follows_the_gaussian_flow(rng):
    schedule = NoiseSchedule()
    mean, spread = 4.0, 1.0
    initial = rng.standard_normal((1, 1, 3, 3))
    sigma_max = euler_sigmas(schedule, 200)[1][0]
    out = euler_sample(gaussian_oracle(schedule, mean, spread), None, None, 200, None, 0,
                       schedule, initial=initial).data
    start = initial * np.sqrt(sigma_max ** 2 + 1.0) - mean
    expected = start * spread / np.sqrt(spread ** 2 + sigma_max ** 2)
    np.testing.assert_allclose(out - mean, expected, rtol=0.05, atol=0.02)


def euler_endpoint_error(schedule, spread, steps, mean=0.0):
    """Relative endpoint error of Euler against the closed-form Gaussian flow."""
    initial = np.ones((1, 1, 1, 1))
    out = euler_sample(gaussian_oracle(schedule, mean, spread), None, None, steps, None, 0,
                       schedule, initial=initial).data.astype(np.float64)
    sigma_max = euler_sigmas(schedule, steps)[1][0]
    start = np.sqrt(sigma_max ** 2 + 1.0) - mean
    exact = mean + start * spread / np.sqrt(spread ** 2 + sigma_max ** 2)
    return float(out.reshape(-1)[0] - exact) / exact


def test_twenty_euler_steps_reach_the_affine_flow_endpoint():
    assert abs(euler_endpoint_error(NoiseSchedule(), 1.0, 20, mean=4.0)) < 0.05
    assert abs(euler_endpoint_error(NoiseSchedule(), 2.0, 20, mean=4.0)) < 0.05


def test_euler_error_halves_when_steps_double():
    schedule = NoiseSchedule()
    errors = [euler_endpoint_error(schedule, 1.0, steps) for steps in (20, 40, 80)]
    assert abs(errors[2]) < 0.05
    for coarse, fine in zip(errors, errors[1:]):
        assert 1.5 <= coarse / fine <= 2.5


def test_samplers_are_seed_deterministic():
    schedule = NoiseSchedule(50)
    denoiser = gaussian_oracle(schedule, 0.0, 1.0)
    for kind in ('euler', 'ddpm'):
        first = sample(kind, denoiser, None, None, 4, None, 11, schedule, (1, 2, 2, 2)).data
        again = sample(kind, denoiser, None, None, 4, None, 11, schedule, (1, 2, 2, 2)).data
        other = sample(kind, denoiser, None, None, 4, None, 12, schedule, (1, 2, 2, 2)).data
        assert first.shape == (1, 2, 2, 2)
        np.testing.assert_array_equal(first, again)
        assert not np.array_equal(first, other)


def test_sampler_arguments_are_checked():
    schedule = NoiseSchedule(50)
    denoiser = gaussian_oracle(schedule, 0.0, 1.0)
    with pytest.raises(ValueError):
        sample('heun', denoiser, None, None, 4, None, 0, schedule, (1, 1, 2, 2))
    with pytest.raises(ValueError):
        euler_sample(denoiser, None, None, 0, None, 0, schedule, shape=(1, 1, 2, 2))
