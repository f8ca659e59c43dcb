# -*- coding: utf-8 -*-
from core.degrade import build_dataset
from helpers.models import LEVELS
from stages.utils import log


def run_stage(options):
    """
    Builds the training split and one validation split per degradation level.

    ``--n`` overrides both ``data.train-size`` and ``data.val-size``;
    ``--level`` limits the validation splits to that level.
    """
    config = options.config
    layout = options.layout
    seed = config.general.seed
    size = config.model.image_size
    train_size = config.data.train_size if options.n is None else options.n
    val_size = config.data.val_size if options.n is None else options.n
    levels = LEVELS if options.level is None else (options.level,)

    manifest = build_dataset(train_size, config.data.train_level, seed,
                             layout.data_dir('train'), size, name='train', show_progress=None)
    log(f'train split: {train_size} items, manifest {manifest}')
    for level in levels:
        split = f'val-{level}'
        manifest = build_dataset(val_size, level, seed, layout.data_dir(split), size,
                                 name=split, show_progress=None)
        log(f'{split} split: {val_size} items, manifest {manifest}')
    return True
