# -*- coding: utf-8 -*-
"""
Reference metrics (PSNR, SSIM), cross-attention attribution maps and the
evaluation loops that restore a dataset split and score it.
"""
from dataclasses import dataclass
import os
import cv2
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from tqdm import tqdm
from core.degrade import first_kind_token, sample_spec, shape_mask
from core.denoiser import VOCABULARY
from core.nn import AttentionStore
from core.tensor import ShapeError
from engines.ppm_engine import write_heatmap, write_ppm
from helpers.models import MetricReport
from helpers.rng_helper import substream, STREAM_SAMPLER

PSNR_CAP = 100.0
SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


def _pair(a, b):
    a = np.asarray(getattr(a, 'data', a), dtype=np.float64)
    b = np.asarray(getattr(b, 'data', b), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f'metric inputs differ in shape: {a.shape} vs {b.shape}')
    return a, b


def psnr(a, b):
    """
    Peak signal-to-noise ratio in dB of two images in [-1, 1], measured on
    the [0, 1] range; identical images give the 100 dB cap.
    """
    a, b = _pair(a, b)
    mse = float(np.mean(((a - b) / 2.0) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def to_luma(image):
    """[3,H,W] (or [H,W]) in [-1, 1] to an [H,W] luma plane in [0, 1]."""
    image = (np.asarray(image, dtype=np.float64) + 1.0) / 2.0
    if image.ndim == 2:
        return image
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f'expected a [3,H,W] or [H,W] image, got {image.shape}')
    return np.tensordot(LUMA, image, axes=1)


def ssim_map(a, b, window=SSIM_WINDOW):
    """SSIM of every valid window position (uniform window, population statistics)."""
    a, b = _pair(a, b)
    x, y = to_luma(a), to_luma(b)
    if x.shape[0] < window or x.shape[1] < window:
        raise ValueError(f'image {x.shape} is smaller than the {window}x{window} SSIM window')
    patches_x = sliding_window_view(x, (window, window))
    patches_y = sliding_window_view(y, (window, window))
    mu_x = patches_x.mean(axis=(2, 3))
    mu_y = patches_y.mean(axis=(2, 3))
    var_x = patches_x.var(axis=(2, 3))
    var_y = patches_y.var(axis=(2, 3))
    cov = (patches_x * patches_y).mean(axis=(2, 3)) - mu_x * mu_y
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    return ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / \
        ((mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))


def ssim(a, b, window=SSIM_WINDOW):
    """
    Mean structural similarity of two images in [-1, 1] on their luma planes.

    Raises:
        ShapeError: If the images differ in shape.
        ValueError: If the image is smaller than the window.
    """
    return float(np.mean(ssim_map(a, b, window)))


@dataclass
class DaamMap:
    """
    Attribution heatmap of one caption token.

    Attributes:
        token (int): Token id.
        heatmap (numpy.ndarray): [H,W] min-max normalized map in [0, 1].
        raw (numpy.ndarray): The summed map before normalization.
        minimum, maximum (float): Range of ``raw``.
        degenerate (bool): ``raw`` was flat, so ``heatmap`` is all zeros.
        maps (int): Number of layer/step maps aggregated.
    """
    token: int
    heatmap: np.ndarray
    raw: np.ndarray
    minimum: float
    maximum: float
    degenerate: bool
    maps: int

    @property
    def word(self):
        return VOCABULARY[self.token]


def token_positions(caption, token, max_length=None):
    tokens = list(caption)[:max_length] if max_length else list(caption)
    positions = [index for index, value in enumerate(tokens) if value == token]
    if not positions:
        raise ValueError(f'token "{VOCABULARY[token]}" is not part of the caption')
    return positions


def upscale_map(weights, grid, size):
    """One token's [L] attention column as an [size, size] bilinear upscale."""
    plane = np.asarray(weights, dtype=np.float64).reshape(grid)
    return cv2.resize(plane, (size, size), interpolation=cv2.INTER_LINEAR)


def compute_daam(records, caption, token, size, batch_index=0, max_length=None): # pylint: disable=too-many-arguments
    """
    Aggregates captured cross-attention maps into a token heatmap.

    For every captured layer and step the token's column is taken (summed
    over repeated occurrences), reshaped to the layer's grid, bilinearly
    upscaled to ``size`` and summed with uniform weight. The sum is min-max
    normalized; a flat sum yields an all-zero map flagged degenerate.

    Args:
        records (list[dict]): ``AttentionStore.records``.
        caption (list[int]): Caption token ids of the image.
        token (int): Token to attribute.
        size (int): Output side length.
        batch_index (int): Image within the captured batch.
        max_length (int, optional): Caption length used by the embedder.

    Raises:
        ValueError: If the token is absent from the caption or nothing was captured.
    """
    positions = token_positions(caption, token, max_length)
    if not records:
        raise ValueError('no cross-attention maps were captured')
    raw = np.zeros((size, size), dtype=np.float64)
    for record in records:
        column = record['weights'][batch_index][:, positions].sum(axis=1)
        raw += upscale_map(column, record['grid'], size)
    minimum, maximum = float(raw.min()), float(raw.max())
    degenerate = maximum - minimum <= 1e-9 * max(abs(maximum), 1e-12)
    heatmap = np.zeros_like(raw) if degenerate else (raw - minimum) / (maximum - minimum)
    return DaamMap(token=token, heatmap=heatmap, raw=raw, minimum=minimum, maximum=maximum,
                   degenerate=degenerate, maps=len(records))


def daam_mask_mass(heatmap, mask):
    """Share of the heatmap's total mass that falls inside ``mask``."""
    heatmap = np.asarray(heatmap, dtype=np.float64)
    total = heatmap.sum()
    if total <= 0:
        return 0.0
    return float(heatmap[np.asarray(mask, dtype=bool)].sum() / total)


def shuffled_mask(mask, rng):
    """Same number of pixels as ``mask`` at spatially permuted positions."""
    mask = np.asarray(mask, dtype=bool)
    return rng.permutation(mask.reshape(-1)).reshape(mask.shape)


def item_sampler_seed(seed, index):
    """Sampler seed of one dataset item, independent of the evaluated window."""
    return int(substream(seed, f'{STREAM_SAMPLER}/{index}').integers(0, 2 ** 31 - 1))


def run_eval(models, items, level, dataset='', seed=0, restored_dir=None, show_progress=None): # pylint: disable=too-many-arguments
    """
    Restores every item and scores it against its HQ image.

    Returns:
        tuple[MetricReport, MetricReport]: Restored scores and the LQ-input
        baseline, both in item order.
    """
    report = MetricReport(dataset, level, source='restored')
    baseline = MetricReport(dataset, level, source='lq')
    if restored_dir:
        os.makedirs(restored_dir, exist_ok=True)
    disable = None if show_progress is None else not show_progress
    for item in tqdm(items, desc=f'eval {level}', disable=disable):
        restored = models.restore(item.lq[None], [item.caption],
                                  item_sampler_seed(seed, item.index))[0]
        report.add(item.index, psnr(restored, item.hq), ssim(restored, item.hq))
        baseline.add(item.index, psnr(item.lq, item.hq), ssim(item.lq, item.hq))
        if restored_dir:
            write_ppm(os.path.join(restored_dir, f'{item.index:05d}.ppm'), restored)
    return report, baseline


@dataclass
class DaamResult:
    index: int
    word: str
    inside: float
    shuffled: float
    degenerate: bool

    def toline(self):
        return (f'{self.index}, {self.word}, {self.inside!r}, {self.shuffled!r}, '
                f'{str(self.degenerate).lower()}')


def run_daam(models, items, seed=0, out_dir=None, show_progress=None): # pylint: disable=too-many-locals
    """
    Restores items with attention capture and scores each item's DAAM for
    the first shape kind named in its caption: mass inside the true shape
    mask against mass under a spatially shuffled copy of that mask.

    Returns:
        list[DaamResult]
    """
    size = models.config.model.image_size
    max_length = models.config.model.caption_length
    results = []
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    disable = None if show_progress is None else not show_progress
    for item in tqdm(items, desc='daam', disable=disable):
        store = AttentionStore()
        restored = models.restore(item.lq[None], [item.caption],
                                  item_sampler_seed(seed, item.index), store=store)[0]
        token = first_kind_token(item.caption)
        daam = compute_daam(store.records, item.caption, token, size, max_length=max_length)
        mask = shape_mask(sample_spec(item.seed, size), VOCABULARY[token])
        shuffled = shuffled_mask(mask, substream(seed, f'daam/{item.index}'))
        results.append(DaamResult(
            index=item.index,
            word=daam.word,
            inside=daam_mask_mass(daam.heatmap, mask),
            shuffled=daam_mask_mass(daam.heatmap, shuffled),
            degenerate=daam.degenerate))
        if out_dir:
            stem = f'{item.index:05d}'
            write_ppm(os.path.join(out_dir, f'{stem}-restored.ppm'), restored)
            write_heatmap(os.path.join(out_dir, f'{stem}-{daam.word}.ppm'), daam.heatmap)
    return results
