# -*- coding: utf-8 -*-
import os
from core.degrade import first_kind_token
from core.denoiser import caption_tokens, caption_words
from core.evaluation import compute_daam
from core.nn import AttentionStore
from core.pipeline import build_models, COMPONENTS
from core.train import build_ablation
from engines.ftnsr_engine import read_tensor
from engines.ppm_engine import read_ppm, write_heatmap, write_ppm
from helpers.models import ConfigError
from stages.utils import ensure_parent_path, load_available, load_parts, load_split, log,\
    require_checkpoint, validation_split


def read_input(filename):
    """
    LQ image and caption of a single input file (.ppm or .ftnsr). The
    caption is read from a sidecar ``<stem>.txt`` of tokens when present.
    """
    if not os.path.isfile(filename):
        raise FileNotFoundError(f'input "{filename}" does not exist')
    file_ending = os.path.splitext(filename)[1].lower()
    if file_ending == '.ftnsr':
        image = read_tensor(filename)
    elif file_ending in ('.ppm', '.pnm'):
        image = read_ppm(filename)
    else:
        raise ConfigError(f'unsupported input "{filename}", expected .ppm or .ftnsr')
    if image.ndim == 4:
        image = image[0]
    caption = []
    sidecar = os.path.splitext(filename)[0] + '.txt'
    if os.path.isfile(sidecar):
        with open(sidecar, encoding='utf-8') as infile:
            caption = caption_tokens(infile.read().split())
    return image, caption


def load_restoration_models(options):
    """Fine-tuned models from the joint checkpoint or ``--from-checkpoint``."""
    config = options.config
    models = build_models(config, build_ablation(config.ablation.key, config))
    if options.from_checkpoint:
        load_available(models, options.from_checkpoint)
    else:
        load_parts(models, require_checkpoint(options.layout, 'joint'), COMPONENTS)
    return models


def run_stage(options):
    """
    Restores one LQ image (``--input`` or the first item of the validation
    split for ``--level``) and writes it as PPM.
    """
    config = options.config
    layout = options.layout
    models = load_restoration_models(options)
    if options.input_filename:
        lq, caption = read_input(options.input_filename)
        stem = os.path.splitext(os.path.basename(options.input_filename))[0]
    else:
        items = load_split(layout, validation_split(options.level or 'II'), options.input_skip, 1)
        if not items:
            log('validation split is empty, nothing to restore')
            return False
        lq, caption = items[0].lq, items[0].caption
        stem = f'{items[0].index:05d}'
    if lq.shape[-1] != config.model.image_size or lq.shape[-2] != config.model.image_size:
        raise ConfigError(f'input is {lq.shape[-2]}x{lq.shape[-1]}, '
                          f'model.image-size is {config.model.image_size}')

    store = AttentionStore() if config.sampler.capture_daam else None
    restored = models.restore(lq[None], [caption], config.general.seed, store=store)[0]
    output = options.output_filename or os.path.join(layout.folder('restored'), f'{stem}.ppm')
    ensure_parent_path(output)
    write_ppm(output, restored)
    log(f'restored "{" ".join(caption_words(caption))}" to {output}')

    if store is not None:
        write_attribution(store, caption, output, config)
    return True


def write_attribution(store, caption, output, config):
    """Heatmap of the caption's first shape word next to the restored image."""
    try:
        token = first_kind_token(caption)
    except ValueError:
        log('caption names no shape, no attribution map written')
        return None
    daam = compute_daam(store.records, caption, token, config.model.image_size,
                        max_length=config.model.caption_length)
    heatmap = f'{os.path.splitext(output)[0]}-{daam.word}.ppm'
    write_heatmap(heatmap, daam.heatmap)
    log(f'attribution map for "{daam.word}" written to {heatmap}')
    return heatmap
