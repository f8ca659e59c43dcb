# -*- coding: utf-8 -*-
from core.pipeline import build_models
from core.train import STAGE_PRETRAIN_ALIGN, TrainConfig, build_ablation, run_stage as run_training
from engines.loss_log_engine import write_loss_log
from stages.train_prior import PRIOR_PARTS, training_data
from stages.utils import checkpoint_info, load_available, load_parts, log,\
    require_checkpoint, save_parts


def prepared_models(options, plan):
    """
    Models for the restoration stages: pretrained VAE, the prior's denoiser
    and caption embedder, and an LQ encoder initialized from the VAE encoder.
    """
    layout = options.layout
    models = build_models(options.config, plan)
    load_parts(models, require_checkpoint(layout, 'vae'), ('vae',))
    load_parts(models, require_checkpoint(layout, 'prior'), PRIOR_PARTS)
    models.init_lq_encoder()
    return models


def run_stage(options, plan=None):
    """
    Trains only the alignment module; LQ encoder and denoiser stay frozen.
    Skipped (successfully) when the plan has no alignment pretraining.
    """
    config = options.config
    layout = options.layout
    plan = plan or build_ablation(config.ablation.key, config)
    if not plan.pretrain_align:
        log(f'alignment pretraining skipped for "{plan.key}"')
        return True
    models = prepared_models(options, plan)
    if options.from_checkpoint:
        load_available(models, options.from_checkpoint)
    data = training_data(options, models)
    if data is None:
        log('train split is empty, nothing to train')
        return False
    path = layout.checkpoint('align')
    stage = TrainConfig.for_stage(config, STAGE_PRETRAIN_ALIGN)

    def checkpoint_fn(iteration):
        return save_parts(models, path, ('align',),
                          checkpoint_info(STAGE_PRETRAIN_ALIGN, iteration, config))

    result = run_training(stage, models, data, checkpoint_fn=checkpoint_fn)
    write_loss_log(layout.log_file('pretrain-align'), result.records)
    if result.records:
        log(f'pretrain-align final loss: {result.losses[-1]!r}')
    return True
