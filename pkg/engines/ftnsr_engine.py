# -*- coding: utf-8 -*-
import numpy as np

MAGIC = b'FTNSR1'


def encode_tensor(array):
    """
    Serializes an array to the FTNSR1 layout.

    Layout: the magic bytes ``FTNSR1``, one unsigned byte holding the rank,
    ``rank`` little-endian u32 extents, then the row-major little-endian f32
    payload.

    Args:
        array (numpy.ndarray | Tensor): Values to serialize, cast to float32.

    Returns:
        bytes: The encoded file content.
    """
    array = np.asarray(getattr(array, 'data', array))
    if array.ndim > 255:
        raise ValueError(f'FTNSR1 supports rank <= 255, got {array.ndim}')
    if any(extent >= 2 ** 32 for extent in array.shape):
        raise ValueError(f'FTNSR1 extents must fit in u32, got {array.shape}')
    header = MAGIC + bytes([array.ndim]) + np.asarray(array.shape, dtype='<u4').tobytes()
    payload = np.ascontiguousarray(array, dtype='<f4').tobytes(order='C')
    return header + payload


def decode_tensor(content):
    """
    Parses FTNSR1 bytes back into a float32 array.

    Raises:
        ValueError: On a wrong magic, or a truncated or oversized payload.
    """
    if content[:len(MAGIC)] != MAGIC:
        raise ValueError('not an FTNSR1 file (bad magic)')
    offset = len(MAGIC)
    if len(content) <= offset:
        raise ValueError('truncated FTNSR1 header')
    rank = content[offset]
    offset += 1
    extents_end = offset + 4 * rank
    if len(content) < extents_end:
        raise ValueError('truncated FTNSR1 header')
    shape = tuple(int(e) for e in np.frombuffer(content[offset:extents_end], dtype='<u4'))
    count = int(np.prod(shape)) if rank else 1
    expected = extents_end + 4 * count
    if len(content) != expected:
        raise ValueError(
            f'FTNSR1 payload size mismatch: expected {expected} bytes for shape {shape}, '
            f'got {len(content)}')
    payload = np.frombuffer(content[extents_end:], dtype='<f4')
    return payload.astype(np.float32).reshape(shape)


def write_tensor(filename, array):
    content = encode_tensor(array)
    with open(filename, 'wb') as outfile:
        outfile.write(content)
    return content


def read_tensor(filename):
    with open(filename, 'rb') as infile:
        return decode_tensor(infile.read())
