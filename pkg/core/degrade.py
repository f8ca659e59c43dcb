# -*- coding: utf-8 -*-
"""
Procedural toy images with captions and the seeded degradation pipeline
that turns them into LQ counterparts at three severity levels.

Images travel as float32 [3,H,W] in [-1, 1]; the degradation stages work on
HWC float32 in [0, 1] with OpenCV.
"""
from dataclasses import dataclass, field
import os
import cv2
import numpy as np
from PIL import Image, ImageDraw
from tqdm import tqdm
from core.denoiser import TOKEN_IDS, caption_tokens, caption_words
from engines.ftnsr_engine import read_tensor, write_tensor
from engines.manifest_engine import ManifestEntry, read_manifest, write_manifest
from engines.ppm_engine import write_ppm
from helpers.models import LEVELS
from helpers.rng_helper import substream, STREAM_DATA

SHAPE_KINDS = ('circle', 'square', 'triangle')
COLORS = {
    'red': (230, 40, 40),
    'green': (40, 200, 60),
    'blue': (50, 80, 235),
    'yellow': (240, 220, 40),
    'magenta': (220, 50, 200),
    'cyan': (40, 210, 220),
    'white': (245, 245, 245),
    'orange': (245, 140, 30),
}
COUNT_WORDS = ('one', 'two', 'three')

STAGE_KINDS = ('blur', 'resize', 'noise', 'compress')
RESIZE_METHODS = {
    'bicubic': cv2.INTER_CUBIC,
    'area': cv2.INTER_AREA,
}

LEVEL_PRESETS = {
    'I': {'blur': (0.2, 1.0), 'scale': 2, 'noise': (0.0, 5 / 255),
          'quality': (80, 95), 'second_order': False},
    'II': {'blur': (0.5, 2.0), 'scale': 4, 'noise': (2 / 255, 10 / 255),
           'quality': (60, 85), 'second_order': False},
    'III': {'blur': (1.0, 3.0), 'scale': 4, 'noise': (5 / 255, 20 / 255),
            'quality': (30, 70), 'second_order': True},
}

# standard JPEG luminance quantization table
JPEG_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)
BLOCK = 8


@dataclass
class ToyShape:
    kind: str
    center: tuple
    radius: float
    color: str


@dataclass
class ToyImageSpec:
    """Everything needed to redraw a toy image; the caption follows from it."""
    size: int
    background: tuple
    gradient: tuple
    shapes: list = field(default_factory=list)

    @property
    def caption(self):
        words = [COUNT_WORDS[len(self.shapes) - 1]]
        for shape in self.shapes:
            words.extend([shape.color, shape.kind])
        return caption_tokens(words)


def sample_spec(seed, size=32):
    rng = substream(seed, f'{STREAM_DATA}/hq')
    background = tuple(int(value) for value in rng.integers(10, 90, size=3))
    gradient = tuple(int(value) for value in rng.integers(-40, 41, size=2))
    colors = list(COLORS)
    shapes = []
    for _ in range(int(rng.integers(1, len(COUNT_WORDS) + 1))):
        radius = float(rng.uniform(0.12, 0.25) * size)
        center = (float(rng.uniform(radius, size - radius)),
                  float(rng.uniform(radius, size - radius)))
        shapes.append(ToyShape(
            kind=SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))],
            center=center,
            radius=radius,
            color=colors[int(rng.integers(len(colors)))]))
    return ToyImageSpec(size=size, background=background, gradient=gradient, shapes=shapes)


def _outline(shape):
    x, y = shape.center
    r = shape.radius
    if shape.kind == 'triangle':
        return [(x, y - r), (x - 0.866 * r, y + 0.5 * r), (x + 0.866 * r, y + 0.5 * r)]
    return [x - r, y - r, x + r, y + r]


def _draw(draw, shape, fill):
    if shape.kind == 'circle':
        draw.ellipse(_outline(shape), fill=fill)
    elif shape.kind == 'square':
        draw.rectangle(_outline(shape), fill=fill)
    else:
        draw.polygon(_outline(shape), fill=fill)


def render(spec):
    """Draws ``spec`` into a float32 [3,H,W] image in [-1, 1]."""
    ramp = np.linspace(-0.5, 0.5, spec.size)
    background = (np.asarray(spec.background, dtype=np.float64)[None, None, :]
                  + spec.gradient[0] * ramp[None, :, None]
                  + spec.gradient[1] * ramp[:, None, None])
    image = Image.fromarray(np.clip(np.round(background), 0, 255).astype(np.uint8), mode='RGB')
    draw = ImageDraw.Draw(image)
    for shape in spec.shapes:
        _draw(draw, shape, COLORS[shape.color])
    array = np.asarray(image, dtype=np.float32).transpose(2, 0, 1)
    return (array / 127.5 - 1.0).astype(np.float32)


def shape_mask(spec, kind):
    """Boolean [H,W] mask of the visible pixels of every shape of ``kind``."""
    labels = Image.new('L', (spec.size, spec.size), 0)
    draw = ImageDraw.Draw(labels)
    for index, shape in enumerate(spec.shapes):
        _draw(draw, shape, index + 1)
    labels = np.asarray(labels)
    wanted = [index + 1 for index, shape in enumerate(spec.shapes) if shape.kind == kind]
    return np.isin(labels, wanted)


def synth_hq(seed, size=32):
    """
    Seeded toy HQ image and its caption.

    Returns:
        tuple: (float32 [3,H,W] image in [-1, 1], caption token ids, ToyImageSpec)
    """
    spec = sample_spec(seed, size)
    return render(spec), spec.caption, spec


@dataclass
class DegradationStage:
    kind: str
    value: float
    method: str = None

    def validate(self):
        if self.kind not in STAGE_KINDS:
            raise ValueError(f'unknown degradation stage "{self.kind}"')
        if self.kind == 'blur' and not self.value > 0:
            raise ValueError(f'blur sigma must be > 0, got {self.value}')
        if self.kind == 'resize':
            if not self.value > 0:
                raise ValueError(f'resize scale must be > 0, got {self.value}')
            if self.method not in RESIZE_METHODS:
                raise ValueError(f'unknown resize method "{self.method}"')
        if self.kind == 'noise' and not self.value >= 0:
            raise ValueError(f'noise sigma must be >= 0, got {self.value}')
        if self.kind == 'compress' and not 1 <= self.value <= 100:
            raise ValueError(f'compress quality must lie in [1, 100], got {self.value}')


@dataclass
class DegradationRecipe:
    """
    Ordered stages applied strictly in sequence; ``seed`` drives the noise.
    ``second_order`` records that the stages contain a repeated pass.
    """
    stages: list = field(default_factory=list)
    seed: int = 0
    level: str = None
    second_order: bool = False

    def validate(self):
        for stage in self.stages:
            stage.validate()
        return True


def _first_order(rng, preset, with_resize):
    stages = [DegradationStage('blur', float(rng.uniform(*preset['blur'])))]
    if with_resize:
        method = ('bicubic', 'area')[int(rng.integers(2))]
        stages.append(DegradationStage('resize', float(preset['scale']), method))
    stages.append(DegradationStage('noise', float(rng.uniform(*preset['noise']))))
    stages.append(DegradationStage('compress', int(rng.integers(preset['quality'][0],
                                                                preset['quality'][1] + 1))))
    return stages


def make_recipe(level, seed):
    """
    Samples a recipe from the level preset. Level III repeats blur, noise
    and compression a second time at the reduced resolution.

    Raises:
        ValueError: For a level outside I, II, III.
    """
    if level not in LEVEL_PRESETS:
        raise ValueError(f'unknown degradation level "{level}", expected one of {LEVELS}')
    preset = LEVEL_PRESETS[level]
    rng = substream(seed, f'{STREAM_DATA}/recipe')
    stages = _first_order(rng, preset, with_resize=True)
    if preset['second_order']:
        stages.extend(_first_order(rng, preset, with_resize=False))
    return DegradationRecipe(stages=stages, seed=int(seed), level=level,
                             second_order=preset['second_order'])


def gaussian_blur(img, sigma):
    ksize = 2 * int(round(3 * sigma)) + 1
    if ksize == 1:
        return img
    return cv2.GaussianBlur(img, (ksize, ksize), sigmaX=sigma, sigmaY=sigma,
                            borderType=cv2.BORDER_REFLECT_101)


def resize(img, scale, method):
    height, width = img.shape[:2]
    size = (max(1, int(round(width / scale))), max(1, int(round(height / scale))))
    return cv2.resize(img, size, interpolation=RESIZE_METHODS[method])


def quantization_steps(quality):
    """Per-coefficient step sizes in [0, 1] pixel units for ``quality``."""
    if not 1 <= quality <= 100:
        raise ValueError(f'compress quality must lie in [1, 100], got {quality}')
    scale = (200.0 - 2.0 * quality) / 100.0 if quality >= 50 else 50.0 / quality
    return JPEG_LUMA * scale / 255.0


def _padded(img):
    height, width = img.shape[:2]
    pad_h = (-height) % BLOCK
    pad_w = (-width) % BLOCK
    return np.pad(img, ((0, pad_h), (0, pad_w), (0, 0)), mode='edge')


def block_dct(img):
    """8x8 block DCT of an HWC image (edge-padded to whole blocks), float32."""
    padded = _padded(np.asarray(img, dtype=np.float32))
    coefficients = np.empty_like(padded)
    for channel in range(padded.shape[2]):
        plane = padded[:, :, channel]
        for row in range(0, plane.shape[0], BLOCK):
            for col in range(0, plane.shape[1], BLOCK):
                block = np.ascontiguousarray(plane[row:row + BLOCK, col:col + BLOCK])
                coefficients[row:row + BLOCK, col:col + BLOCK, channel] = cv2.dct(block)
    return coefficients


def block_idct(coefficients, shape):
    """Inverse of ``block_dct``, cropped back to ``shape``."""
    pixels = np.empty_like(coefficients)
    for channel in range(coefficients.shape[2]):
        plane = coefficients[:, :, channel]
        for row in range(0, plane.shape[0], BLOCK):
            for col in range(0, plane.shape[1], BLOCK):
                block = np.ascontiguousarray(plane[row:row + BLOCK, col:col + BLOCK])
                pixels[row:row + BLOCK, col:col + BLOCK, channel] = cv2.idct(block)
    return pixels[:shape[0], :shape[1], :]


def block_compress(img, quality):
    """
    JPEG-like compression proxy: 8x8 block DCT, AC coefficients rounded to a
    quality-scaled luminance table, inverse DCT, then clipping and rounding to
    8-bit levels. DC coefficients are kept, so constant images on the 8-bit
    grid pass unchanged; quality 100 only round-trips the DCT.

    Args:
        img (numpy.ndarray): HWC float32 image in [0, 1].
        quality (int): 1 (coarsest) to 100.

    Raises:
        ValueError: If quality is outside [1, 100].
    """
    steps = quantization_steps(quality)
    coefficients = block_dct(img)
    if quality < 100:
        tiled = np.tile(steps, (coefficients.shape[0] // BLOCK, coefficients.shape[1] // BLOCK))
        dc = np.zeros_like(tiled, dtype=bool)
        dc[::BLOCK, ::BLOCK] = True
        for channel in range(coefficients.shape[2]):
            plane = coefficients[:, :, channel].astype(np.float64)
            quantized = np.round(plane / tiled) * tiled
            coefficients[:, :, channel] = np.where(dc, plane, quantized)
        pixels = np.clip(block_idct(coefficients, img.shape), 0.0, 1.0)
        return (np.round(pixels * 255.0) / 255.0).astype(np.float32)
    return block_idct(coefficients, img.shape)


def apply_stage(img, stage, rng):
    stage.validate()
    if stage.kind == 'blur':
        return gaussian_blur(img, stage.value)
    if stage.kind == 'resize':
        return resize(img, stage.value, stage.method)
    if stage.kind == 'noise':
        if stage.value == 0:
            return img
        noise = rng.standard_normal(img.shape).astype(np.float32) * np.float32(stage.value)
        return np.clip(img + noise, 0.0, 1.0).astype(np.float32)
    return np.clip(block_compress(img, int(stage.value)), 0.0, 1.0).astype(np.float32)


def degrade(hq, recipe):
    """
    Applies ``recipe`` to a [3,H,W] image in [-1, 1] and resizes the result
    back to H x W with bicubic interpolation.

    Returns:
        numpy.ndarray: float32 [3,H,W] LQ image in [-1, 1].

    Raises:
        ValueError: On an invalid stage parameter.
    """
    recipe.validate()
    hq = np.asarray(getattr(hq, 'data', hq), dtype=np.float32)
    if hq.ndim != 3 or hq.shape[0] != 3:
        raise ValueError(f'degrade expects a [3,H,W] image, got {hq.shape}')
    if not recipe.stages:
        return hq.copy()
    height, width = hq.shape[1:]
    rng = substream(recipe.seed, f'{STREAM_DATA}/degrade')
    img = np.ascontiguousarray(((hq + 1.0) / 2.0).transpose(1, 2, 0), dtype=np.float32)
    for stage in recipe.stages:
        img = apply_stage(img, stage, rng)
        if img.ndim == 2:
            img = img[:, :, None]
    if img.shape[:2] != (height, width):
        img = cv2.resize(img, (width, height), interpolation=cv2.INTER_CUBIC)
    img = np.clip(img, 0.0, 1.0)
    return (img.transpose(2, 0, 1) * 2.0 - 1.0).astype(np.float32)


def degrade_batch(images, recipes):
    """Per-image ``degrade`` over [B,3,H,W]; one recipe per image."""
    images = np.asarray(getattr(images, 'data', images), dtype=np.float32)
    if len(recipes) != images.shape[0]:
        raise ValueError(f'{images.shape[0]} images but {len(recipes)} recipes')
    return np.stack([degrade(image, recipe) for image, recipe in zip(images, recipes)])


def item_level(level, item_seed):
    if level == 'mixed':
        return LEVELS[int(substream(item_seed, f'{STREAM_DATA}/level').integers(len(LEVELS)))]
    if level not in LEVELS:
        raise ValueError(f'unknown degradation level "{level}"')
    return level


def item_seeds(n, seed, name):
    """Per-item seeds for a split; splits with different names never share seeds."""
    return [int(value) for value in
            substream(seed, f'{STREAM_DATA}/{name}').integers(0, 2 ** 31 - 1, size=n)]


def build_dataset(n, level, seed, directory, size=32, name='train', show_progress=False): # pylint: disable=too-many-arguments,too-many-locals
    """
    Writes ``n`` (HQ, LQ, caption) triples and their manifest.

    Each item is stored as FTNSR1 tensors plus PPM previews under ``hq/`` and
    ``lq/``, with a caption sidecar under ``captions/``.

    Args:
        n (int): Number of items, >= 0.
        level (str): ``I``, ``II``, ``III`` or ``mixed`` (uniform per item).
        seed (int): Root seed.
        directory (str): Output folder; the manifest is ``manifest.txt``.
        size (int): Image side length.
        name (str): Split name, selects the per-item seed stream.

    Returns:
        str: Manifest path.
    """
    if n < 0:
        raise ValueError(f'dataset size must be >= 0, got {n}')
    item_level(level, 0)
    for folder in ('hq', 'lq', 'captions'):
        os.makedirs(os.path.join(directory, folder), exist_ok=True)
    entries = []
    seeds = item_seeds(n, seed, name)
    disable = None if show_progress is None else not show_progress
    for index, item_seed in enumerate(tqdm(seeds, desc=f'synth {name}', disable=disable)):
        chosen = item_level(level, item_seed)
        hq, caption, _ = synth_hq(item_seed, size)
        lq = degrade(hq, make_recipe(chosen, item_seed))
        stem = f'{index:05d}'
        entry = ManifestEntry(
            index=index,
            hq_path=f'hq/{stem}.ftnsr',
            lq_path=f'lq/{stem}.ftnsr',
            caption_path=f'captions/{stem}.txt',
            seed=item_seed,
            level=chosen)
        write_tensor(os.path.join(directory, entry.hq_path), hq)
        write_tensor(os.path.join(directory, entry.lq_path), lq)
        write_ppm(os.path.join(directory, 'hq', f'{stem}.ppm'), hq)
        write_ppm(os.path.join(directory, 'lq', f'{stem}.ppm'), lq)
        with open(os.path.join(directory, entry.caption_path), 'w',
                  encoding='utf-8', newline='\n') as outfile:
            outfile.write(' '.join(caption_words(caption)) + '\n')
        entries.append(entry)
    manifest = os.path.join(directory, 'manifest.txt')
    write_manifest(manifest, entries)
    return manifest


@dataclass
class DatasetItem:
    index: int
    hq: np.ndarray
    lq: np.ndarray
    caption: list
    seed: int
    level: str


def load_dataset(manifest, skip=0, take=-1):
    """
    Reads the items listed in ``manifest`` (optionally a skip/take window).

    Raises:
        FileNotFoundError: If the manifest or an item file is missing.
    """
    directory = os.path.dirname(os.path.abspath(manifest))
    items = []
    for entry in read_manifest(manifest, skip, take):
        with open(os.path.join(directory, entry.caption_path), encoding='utf-8') as infile:
            words = infile.read().split()
        items.append(DatasetItem(
            index=entry.index,
            hq=read_tensor(os.path.join(directory, entry.hq_path)),
            lq=read_tensor(os.path.join(directory, entry.lq_path)),
            caption=caption_tokens(words),
            seed=entry.seed,
            level=entry.level))
    return items


def stack_items(items):
    """(HQ [N,3,H,W], LQ [N,3,H,W], captions) arrays from dataset items."""
    if not items:
        return None, None, []
    hq = np.stack([item.hq for item in items]).astype(np.float32)
    lq = np.stack([item.lq for item in items]).astype(np.float32)
    return hq, lq, [list(item.caption) for item in items]


def first_kind_token(caption):
    """Token id of the first shape kind named in a caption."""
    kinds = {TOKEN_IDS[kind] for kind in SHAPE_KINDS}
    for token in caption:
        if token in kinds:
            return token
    raise ValueError('caption names no shape kind')
