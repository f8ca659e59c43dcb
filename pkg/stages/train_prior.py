# -*- coding: utf-8 -*-
from core.degrade import stack_items
from core.pipeline import build_models
from core.train import STAGE_PRIOR, TrainConfig, TrainingData, run_stage as run_training
from engines.loss_log_engine import write_loss_log
from stages.utils import checkpoint_info, load_available, load_parts, load_split, log,\
    require_checkpoint, save_parts

PRIOR_PARTS = ('unet', 'text')


def training_data(options, models):
    """Training split as (clean latent, LQ image, caption) triples."""
    items = load_split(options.layout, 'train', options.input_skip, options.input_take)
    hq, lq, captions = stack_items(items)
    if hq is None:
        return None
    return TrainingData.from_images(models.vae.encoder, hq, lq, captions)


def run_stage(options):
    """
    Pretrains the denoiser and the caption embedder as a text-conditioned
    latent diffusion prior on clean HQ latents.
    """
    config = options.config
    layout = options.layout
    models = build_models(config)
    load_parts(models, require_checkpoint(layout, 'vae'), ('vae',))
    if options.from_checkpoint:
        load_available(models, options.from_checkpoint)
    data = training_data(options, models)
    if data is None:
        log('train split is empty, nothing to train')
        return False
    path = layout.checkpoint('prior')
    stage = TrainConfig.for_stage(config, STAGE_PRIOR)

    def checkpoint_fn(iteration):
        return save_parts(models, path, PRIOR_PARTS, checkpoint_info(STAGE_PRIOR, iteration, config))

    result = run_training(stage, models, data, checkpoint_fn=checkpoint_fn)
    write_loss_log(layout.log_file('train-prior'), result.records)
    if result.records:
        log(f'train-prior final loss: {result.losses[-1]!r}')
    return True
