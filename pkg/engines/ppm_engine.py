# -*- coding: utf-8 -*-
import numpy as np
from PIL import Image


def to_uint8(image):
    """[3,H,W] values in [-1, 1] to HWC uint8, clamping out-of-range values."""
    array = np.asarray(getattr(image, 'data', image), dtype=np.float64)
    if array.ndim == 4 and array.shape[0] == 1:
        array = array[0]
    if array.ndim != 3 or array.shape[0] != 3:
        raise ValueError(f'expected a [3,H,W] image, got {array.shape}')
    array = (np.clip(array, -1.0, 1.0) + 1.0) * 127.5
    return np.round(array).astype(np.uint8).transpose(1, 2, 0)


def write_ppm(output_filename, image):
    """Writes a [3,H,W] image in [-1, 1] as binary PPM (P6, 8 bit)."""
    Image.fromarray(to_uint8(image), mode='RGB').save(output_filename, format='PPM')


def write_heatmap(output_filename, heatmap):
    """Writes an [H,W] map in [0, 1] as a grayscale PPM (equal R, G and B)."""
    array = np.round(np.clip(np.asarray(heatmap, dtype=np.float64), 0.0, 1.0) * 255.0)
    gray = array.astype(np.uint8)
    Image.fromarray(np.stack([gray, gray, gray], axis=2), mode='RGB').save(
        output_filename, format='PPM')


def read_ppm(input_filename):
    """Reads a PPM into a float32 [3,H,W] image in [-1, 1]."""
    with Image.open(input_filename) as image:
        array = np.asarray(image.convert('RGB'), dtype=np.float32)
    return (array.transpose(2, 0, 1) / 127.5 - 1.0).astype(np.float32)
