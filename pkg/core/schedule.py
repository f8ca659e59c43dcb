# -*- coding: utf-8 -*-
"""
Diffusion mathematics: the linear-beta noise schedule, forward noising, the
ancestral DDPM step, classifier-free guidance and the two samplers (Euler in
sigma space and ancestral DDPM over a respaced schedule).

Schedule tables are float64; tensors handed to the denoiser are float32.
"""
from dataclasses import dataclass
import numpy as np
from core.tensor import Tensor, ShapeError, add, as_tensor, expand, mul, no_grad, reshape, sub
from helpers.rng_helper import substream, STREAM_SAMPLER


class NoiseSchedule:
    """
    Per-step alpha, cumulative alpha-bar and posterior sigma tables.

    Betas are spaced linearly in ``[beta_min, beta_max] * 1000 / T`` so a
    short schedule still ends close to pure noise.

    Attributes:
        timesteps (int): Number of steps T.
        alphas, alpha_bars, sigmas (numpy.ndarray): Tables of length T.
        model_timesteps (numpy.ndarray): Timestep fed to the denoiser for each
            entry (differs from ``arange(T)`` after respacing).
    """

    def __init__(self, timesteps=1000, beta_min=1e-4, beta_max=0.02):
        if timesteps < 1:
            raise ValueError(f'timesteps must be >= 1, got {timesteps}')
        scale = 1000.0 / timesteps
        betas = np.linspace(beta_min * scale, beta_max * scale, timesteps, dtype=np.float64)
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError(
                f'beta range [{beta_min}, {beta_max}] rescaled for T={timesteps} leaves (0, 1)')
        self._set_tables(np.cumprod(1.0 - betas), np.arange(timesteps, dtype=np.float64))

    @classmethod
    def from_alpha_bars(cls, alpha_bars, model_timesteps):
        schedule = cls.__new__(cls)
        schedule._set_tables(np.asarray(alpha_bars, dtype=np.float64),
                             np.asarray(model_timesteps, dtype=np.float64))
        return schedule

    def _set_tables(self, alpha_bars, model_timesteps):
        self.alpha_bars = alpha_bars
        previous = np.concatenate([[1.0], alpha_bars[:-1]])
        self.alphas = alpha_bars / previous
        self.timesteps = len(alpha_bars)
        self.sigmas = np.sqrt((1.0 - previous) / (1.0 - alpha_bars)) * np.sqrt(1.0 - self.alphas)
        self.sigmas[0] = 0.0
        self.model_timesteps = model_timesteps
        self.validate()

    def validate(self):
        """
        Checks the table invariants.

        Raises:
            ValueError: If an alpha leaves (0, 1), alpha-bar is not strictly
                decreasing, or alpha-bar disagrees with the running product.
        """
        if np.any(self.alphas <= 0) or np.any(self.alphas >= 1):
            raise ValueError('schedule alphas must lie strictly in (0, 1)')
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ValueError('schedule alpha-bars must be strictly decreasing')
        if np.max(np.abs(np.cumprod(self.alphas) - self.alpha_bars)) > 1e-6:
            raise ValueError('schedule alpha-bars differ from the product of alphas')
        return True

    def check_step(self, t):
        steps = np.asarray(t)
        if np.any(steps < 0) or np.any(steps >= self.timesteps):
            raise ValueError(f'timestep {t} out of range [0, {self.timesteps})')
        if not np.issubdtype(steps.dtype, np.integer):
            raise ValueError(f'timestep {t} must be an integer step index')

    def respace(self, steps):
        """
        Sub-samples ``steps`` evenly spaced timesteps into a new schedule whose
        alphas are ratios of the retained alpha-bars.
        """
        if steps < 1:
            raise ValueError(f'steps must be >= 1, got {steps}')
        kept = np.unique(np.round(np.linspace(0, self.timesteps - 1, steps)).astype(np.int64))
        return NoiseSchedule.from_alpha_bars(self.alpha_bars[kept], self.model_timesteps[kept])

    def sigma_ve(self):
        """Variance-exploding noise levels sqrt((1 - alpha_bar) / alpha_bar)."""
        return np.sqrt((1.0 - self.alpha_bars) / self.alpha_bars)

    def sigma_at(self, t):
        """sigma_ve at a fractional timestep, linearly interpolated."""
        return np.interp(t, np.arange(self.timesteps), self.sigma_ve())


def _per_sample(coefficients, shape):
    coefficients = np.asarray(coefficients, dtype=np.float32)
    if coefficients.ndim == 0:
        return float(coefficients)
    column = Tensor(coefficients.reshape((-1,) + (1,) * (len(shape) - 1)))
    return expand(column, shape)


def forward_noise(x0, eps, t, schedule):
    """
    sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.

    ``t`` is a step index or one index per batch element.

    Raises:
        ShapeError: If ``x0`` and ``eps`` differ in shape.
        ValueError: If ``t`` is outside ``[0, T)``.
    """
    x0 = as_tensor(x0)
    eps = as_tensor(eps)
    if x0.shape != eps.shape:
        raise ShapeError(f'forward_noise: x0 {x0.shape} and eps {eps.shape} differ')
    schedule.check_step(t)
    alpha_bar = schedule.alpha_bars[np.asarray(t)]
    return add(mul(x0, _per_sample(np.sqrt(alpha_bar), x0.shape)),
               mul(eps, _per_sample(np.sqrt(1.0 - alpha_bar), x0.shape)))


def ddpm_step(x_t, eps_hat, t, z, schedule):
    """
    One ancestral step,
    x_{t-1} = (x_t - (1 - alpha_t) / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t) + sigma_t * z.

    sigma_0 is zero, so the last step adds no noise.
    """
    x_t = as_tensor(x_t)
    eps_hat = as_tensor(eps_hat)
    z = as_tensor(z)
    if not x_t.shape == eps_hat.shape == z.shape:
        raise ShapeError(f'ddpm_step: shapes differ {x_t.shape}, {eps_hat.shape}, {z.shape}')
    schedule.check_step(t)
    alpha = schedule.alphas[t]
    coefficient = (1.0 - alpha) / np.sqrt(1.0 - schedule.alpha_bars[t])
    mean_part = mul(sub(x_t, mul(eps_hat, float(coefficient))), float(1.0 / np.sqrt(alpha)))
    return add(mean_part, mul(z, float(schedule.sigmas[t])))


@dataclass
class GuidanceConfig:
    """Guidance scale and the null-caption embedding [1 or B, M, dc]."""
    scale: float
    uncond_embedding: Tensor

    def __post_init__(self):
        if not np.isfinite(self.scale):
            raise ValueError(f'guidance scale must be finite, got {self.scale}')


def cfg_combine(eps_cond, eps_uncond, scale):
    """eps_uncond + scale * (eps_cond - eps_uncond), exact at scale 0 and 1."""
    eps_cond = as_tensor(eps_cond)
    eps_uncond = as_tensor(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise ShapeError(f'cfg_combine: shapes differ {eps_cond.shape} vs {eps_uncond.shape}')
    if scale == 1:
        return Tensor(eps_cond.data.copy())
    if scale == 0:
        return Tensor(eps_uncond.data.copy())
    return add(eps_uncond, mul(sub(eps_cond, eps_uncond), float(scale)))


def _batched_uncond(guidance, batch):
    uncond = guidance.uncond_embedding
    if uncond.shape[0] == batch:
        return uncond
    return expand(reshape(uncond, (1,) + tuple(uncond.shape[1:])), (batch,) + tuple(uncond.shape[1:]))


def guided_eps(denoiser, x_in, f_lq, t, c, guidance, store=None): # pylint: disable=too-many-arguments
    """
    Evaluates the denoiser with classifier-free guidance.

    The unconditional pass is skipped at scale 1 (and without guidance), so
    such a run is identical to a conditioned-only run. Attention capture only
    records the conditional pass.
    """
    timesteps = np.full(x_in.shape[0], t, dtype=np.float64)
    eps_cond = denoiser(x_in, f_lq, timesteps, c, store)
    if guidance is None or guidance.scale == 1:
        return eps_cond
    eps_uncond = denoiser(x_in, f_lq, timesteps, _batched_uncond(guidance, x_in.shape[0]), None)
    return cfg_combine(eps_cond, eps_uncond, guidance.scale)


def euler_sigmas(schedule, steps):
    """Descending sigma grid at ``steps`` evenly spaced timesteps with a final 0."""
    timesteps = np.linspace(0, schedule.timesteps - 1, steps, dtype=np.float64)[::-1].copy()
    sigmas = np.append(schedule.sigma_at(timesteps), 0.0)
    return timesteps, sigmas


def euler_sample(denoiser, f_lq, c, steps, guidance, seed, schedule, # pylint: disable=too-many-arguments,too-many-locals
                 shape=None, store=None, initial=None):
    """
    Deterministic Euler integration of the probability-flow ODE in sigma space.

    The state lives in variance-exploding coordinates; the denoiser sees the
    variance-preserving input x / sqrt(sigma^2 + 1) and its epsilon
    prediction is the ODE direction, x <- x + (sigma_{i+1} - sigma_i) * eps.

    Args:
        denoiser (callable): ``denoiser(x_t, f_lq, t, c, store) -> eps``.
        f_lq (Tensor | None): LQ features passed through to the denoiser.
        c (Tensor | None): Caption embeddings [B, M, dc].
        steps (int): Number of Euler steps, >= 1.
        guidance (GuidanceConfig | None): CFG settings.
        seed (int): Root seed; noise comes from the sampler substream.
        schedule (NoiseSchedule): Training schedule.
        shape (tuple, optional): Latent shape when ``initial`` is not given.
        store (AttentionStore, optional): Receives cross-attention maps.
        initial (numpy.ndarray, optional): Unit-variance starting noise.

    Returns:
        Tensor: The sampled clean latent (float32).
    """
    if steps < 1:
        raise ValueError(f'euler_sample needs steps >= 1, got {steps}')
    timesteps, sigmas = euler_sigmas(schedule, steps)
    if initial is None:
        initial = substream(seed, STREAM_SAMPLER).standard_normal(shape)
    x = np.asarray(initial, dtype=np.float64) * np.sqrt(sigmas[0] ** 2 + 1.0)
    with no_grad():
        for index, t in enumerate(timesteps):
            if store is not None:
                store.step = index
            sigma = sigmas[index]
            x_in = Tensor((x / np.sqrt(sigma ** 2 + 1.0)).astype(np.float32))
            eps = guided_eps(denoiser, x_in, f_lq, t, c, guidance, store)
            x = x + (sigmas[index + 1] - sigma) * eps.data.astype(np.float64)
    return Tensor(x.astype(np.float32))


def ddpm_sample(denoiser, f_lq, c, steps, guidance, seed, schedule, # pylint: disable=too-many-arguments
                shape=None, store=None):
    """
    Ancestral sampling with ``ddpm_step`` over a ``steps``-long respaced schedule.
    """
    respaced = schedule.respace(steps)
    rng = substream(seed, STREAM_SAMPLER)
    x = Tensor(rng.standard_normal(shape).astype(np.float32))
    with no_grad():
        for index in range(respaced.timesteps - 1, -1, -1):
            if store is not None:
                store.step = respaced.timesteps - 1 - index
            eps = guided_eps(denoiser, x, f_lq, respaced.model_timesteps[index], c, guidance, store)
            z = Tensor(rng.standard_normal(shape).astype(np.float32))
            x = ddpm_step(x, eps, index, z, respaced)
    return x


def sample(kind, denoiser, f_lq, c, steps, guidance, seed, schedule, shape, store=None): # pylint: disable=too-many-arguments
    if kind == 'euler':
        return euler_sample(denoiser, f_lq, c, steps, guidance, seed, schedule, shape=shape,
                            store=store)
    if kind == 'ddpm':
        return ddpm_sample(denoiser, f_lq, c, steps, guidance, seed, schedule, shape=shape,
                           store=store)
    raise ValueError(f'unknown sampler kind "{kind}"')
