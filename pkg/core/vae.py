# -*- coding: utf-8 -*-
"""
Tiny deterministic convolutional autoencoder.

The encoder exposes two outputs from one forward pass: the wide penultimate
feature map (the LQ feature source of the restoration model) and the narrow
latent produced by a final 1x1 projection (the diffusion latent). The
decoder maps latents back to pixels at 4x the latent resolution.
"""
from dataclasses import dataclass, field
import numpy as np
from tqdm import tqdm
from core.nn import Module, Conv2d, Downsample, Upsample
from core.optim import BatchSampler, OptimizerState, TrainingDivergedError,\
    adamw_step, clip_grad_norm, cosine_lr
from core.tensor import Tensor, ShapeError, abs_, add, backward, mean, no_grad, silu, sub
from helpers.rng_helper import substream, STREAM_DATA

DOWNSAMPLE_FACTOR = 4


@dataclass
class LatentFeatures:
    """Penultimate tap ``f_lq`` [B,C_pen,h,w] and latent head ``x0`` [B,C_lat,h,w]."""
    f_lq: Tensor
    x0: Tensor


def stage_widths(c_pen):
    return max(c_pen // 4, 1), max(c_pen // 2, 1)


class VaeEncoder(Module):
    def __init__(self, c_pen, c_lat, rng):
        super().__init__()
        if c_pen <= c_lat:
            raise ValueError(f'penultimate width {c_pen} must exceed latent width {c_lat}')
        width1, width2 = stage_widths(c_pen)
        self.c_pen = c_pen
        self.c_lat = c_lat
        self.conv_in = Conv2d(3, width1, 3, rng)
        self.down1 = Downsample(width1, width2, rng)
        self.down2 = Downsample(width2, c_pen, rng)
        self.mid = Conv2d(c_pen, c_pen, 3, rng)
        self.head = Conv2d(c_pen, c_lat, 1, rng)

    def forward(self, img):
        return self.encode(img)

    def encode(self, img):
        """
        Encodes images in [-1, 1] to LatentFeatures.

        Raises:
            ShapeError: If the input is not [B,3,H,W] with H and W divisible by 4.
        """
        if img.ndim != 4 or img.shape[1] != 3:
            raise ShapeError(f'encode expects [B,3,H,W] images, got {img.shape}')
        if img.shape[2] % DOWNSAMPLE_FACTOR or img.shape[3] % DOWNSAMPLE_FACTOR:
            raise ShapeError(f'encode needs H and W divisible by {DOWNSAMPLE_FACTOR}, got {img.shape}')
        h = silu(self.conv_in(img))
        h = silu(self.down1(h))
        h = silu(self.down2(h))
        f_lq = silu(self.mid(h))
        return LatentFeatures(f_lq=f_lq, x0=self.head(f_lq))


class VaeDecoder(Module):
    def __init__(self, c_pen, c_lat, rng):
        super().__init__()
        width1, width2 = stage_widths(c_pen)
        self.c_lat = c_lat
        self.conv_in = Conv2d(c_lat, c_pen, 3, rng)
        self.up1 = Upsample(c_pen, width2, rng)
        self.up2 = Upsample(width2, width1, rng)
        self.conv_out = Conv2d(width1, 3, 3, rng)

    def forward(self, x0):
        return self.decode(x0)

    def decode(self, x0):
        """Latent [B,C_lat,h,w] to raw pixels [B,3,4h,4w]; clamping happens at export."""
        if x0.ndim != 4 or x0.shape[1] != self.c_lat:
            raise ShapeError(f'decode expects [B,{self.c_lat},h,w] latents, got {x0.shape}')
        h = silu(self.conv_in(x0))
        h = silu(self.up1(h))
        h = silu(self.up2(h))
        return self.conv_out(h)


class TinyVae(Module):
    def __init__(self, c_pen, c_lat, rng):
        super().__init__()
        self.encoder = VaeEncoder(c_pen, c_lat, rng)
        self.decoder = VaeDecoder(c_pen, c_lat, rng)

    def forward(self, img):
        return self.decoder.decode(self.encoder.encode(img).x0)

    def encode(self, img):
        return self.encoder.encode(img)

    def decode(self, x0):
        return self.decoder.decode(x0)


def reconstruction_loss(pred, target):
    """Mean L1 plus the mean L1 of horizontal and vertical finite differences."""
    l1 = mean(abs_(sub(pred, target)))
    diff = sub(pred, target)
    grad_x = sub(diff[:, :, :, 1:], diff[:, :, :, :-1])
    grad_y = sub(diff[:, :, 1:, :], diff[:, :, :-1, :])
    return add(l1, add(mean(abs_(grad_x)), mean(abs_(grad_y))))


@dataclass
class VaeTrainResult:
    losses: list = field(default_factory=list)
    checkpoint: str = None

    @property
    def final_loss(self):
        return self.losses[-1] if self.losses else float('nan')


def pretrain_vae(vae, images, config, checkpoint_fn=None, progress=None):
    """
    Trains encoder and decoder to reconstruct HQ images.

    Args:
        vae (TinyVae): Model to train in place.
        images (numpy.ndarray): HQ images [N,3,H,W] in [-1, 1].
        config (ModelConfig): Uses ``train.vae-iters``, ``train.vae-lr``,
            ``train.lr-min``, ``train.batch-size``, ``train.grad-clip``,
            ``train.weight-decay``, ``train.checkpoint-every`` and the seed.
        checkpoint_fn (callable, optional): ``checkpoint_fn(iteration)`` saves
            the current weights and returns the checkpoint path.
        progress (bool, optional): Forwarded to tqdm's ``disable`` inverted;
            ``None`` shows a bar only on a terminal.

    Returns:
        VaeTrainResult: Per-iteration losses and the last checkpoint path.

    Raises:
        TrainingDivergedError: On a NaN/Inf loss, naming the last good checkpoint.
    """
    train = config.train
    vae.set_trainable(True)
    params = vae.parameters()
    state = OptimizerState(weight_decay=train.weight_decay)
    sampler = BatchSampler(len(images), train.batch_size,
                           substream(config.general.seed, f'{STREAM_DATA}/vae'))
    result = VaeTrainResult()
    disable = None if progress is None else not progress
    for iteration in tqdm(range(train.vae_iters), desc='train-vae', disable=disable):
        batch = Tensor(np.ascontiguousarray(images[sampler.next_indices()], dtype=np.float32))
        vae.zero_grad()
        loss = reconstruction_loss(vae(batch), batch)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDivergedError('train-vae', iteration, result.checkpoint)
        backward(loss)
        clip_grad_norm(params, train.grad_clip)
        adamw_step(params, state, cosine_lr(iteration, train.vae_iters, train.vae_lr, train.lr_min))
        result.losses.append(value)
        if checkpoint_fn and train.checkpoint_every and (iteration + 1) % train.checkpoint_every == 0:
            result.checkpoint = checkpoint_fn(iteration + 1)
    if checkpoint_fn:
        result.checkpoint = checkpoint_fn(train.vae_iters)
    return result


def encode_images(encoder, images, batch_size=32):
    """Runs the encoder without tape over [N,3,H,W] images, returning numpy arrays."""
    f_lq, x0 = [], []
    with no_grad():
        for start in range(0, len(images), batch_size):
            features = encoder.encode(Tensor(np.asarray(images[start:start + batch_size],
                                                         dtype=np.float32)))
            f_lq.append(features.f_lq.data)
            x0.append(features.x0.data)
    if not f_lq:
        return LatentFeatures(f_lq=np.empty(0), x0=np.empty(0))
    return LatentFeatures(f_lq=np.concatenate(f_lq), x0=np.concatenate(x0))


def area_downsample(images, factor=DOWNSAMPLE_FACTOR):
    count, channels, height, width = images.shape
    blocks = images.reshape(count, channels, height // factor, factor, width // factor, factor)
    return blocks.mean(axis=(3, 5))


def _probe_mse(features, targets, split):
    rows = features.transpose(0, 2, 3, 1).reshape(features.shape[0], -1, features.shape[1])
    goals = targets.transpose(0, 2, 3, 1).reshape(targets.shape[0], -1, targets.shape[1])
    design = np.concatenate([rows, np.ones(rows.shape[:2] + (1,))], axis=2).astype(np.float64)
    fit_x = design[:split].reshape(-1, design.shape[2])
    fit_y = goals[:split].reshape(-1, goals.shape[2]).astype(np.float64)
    weights = np.linalg.lstsq(fit_x, fit_y, rcond=None)[0]
    test_x = design[split:].reshape(-1, design.shape[2])
    test_y = goals[split:].reshape(-1, goals.shape[2]).astype(np.float64)
    return float(np.mean((test_x @ weights - test_y) ** 2))


@dataclass
class ProbeResult:
    f_lq_error: float
    x0_error: float


def probe_error(encoder, images):
    """
    Linear-probe capacity check of the two encoder outputs.

    Fits an affine map from each output to the area-downsampled image
    intensities on the first half of ``images`` and reports the held-out mean
    squared error on the second half.

    Raises:
        ValueError: With fewer than two images.
    """
    if len(images) < 2:
        raise ValueError('probe_error needs at least two images')
    features = encode_images(encoder, images)
    targets = area_downsample(np.asarray(images, dtype=np.float64))
    split = len(images) // 2
    return ProbeResult(f_lq_error=_probe_mse(features.f_lq, targets, split),
                       x0_error=_probe_mse(features.x0, targets, split))
