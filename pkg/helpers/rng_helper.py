# -*- coding: utf-8 -*-
import numpy as np
from helpers.hash_helper import name_to_int

# Named substreams used across the workflow, one per randomness source.
STREAM_DATA = 'data'
STREAM_INIT = 'init'
STREAM_NOISE = 'noise'
STREAM_DROPOUT = 'dropout'
STREAM_SAMPLER = 'sampler'


def substream(root_seed, name):
    """
    Returns an independent generator for ``name`` derived from the root seed.

    All randomness of a run flows from one root seed through these named
    substreams, so a determinism failure can be pinned to a single stream.

    Args:
        root_seed (int): The run's root seed (``general.seed`` / ``--seed``).
        name (str): Stream name, e.g. ``'noise'`` or ``'data/val-II'``.

    Returns:
        numpy.random.Generator: A PCG64 generator seeded with (root, name).
    """
    return np.random.default_rng([int(root_seed), name_to_int(name)])
