# -*- coding: utf-8 -*-
import math
import os
import numpy as np
from core.degrade import stack_items
from core.evaluation import psnr
from core.optim import cosine_lr
from core.pipeline import build_models
from core.tensor import Tensor, no_grad
from core.train import LossRecord
from core.vae import pretrain_vae, probe_error
from engines.loss_log_engine import write_loss_log
from stages.utils import checkpoint_info, load_available, load_split, log, save_parts

PROBE_IMAGES = 64


def reconstruction_psnr(vae, images):
    if images is None:
        return None
    with no_grad():
        restored = vae(Tensor(images)).data
    return math.fsum(psnr(a, b) for a, b in zip(restored, images)) / len(images)


def run_stage(options):
    """
    Pretrains the autoencoder on the HQ images of the training split and
    records held-out reconstruction PSNR and the linear-probe errors.
    """
    config = options.config
    layout = options.layout
    hq, _, _ = stack_items(load_split(layout, 'train', options.input_skip, options.input_take))
    if hq is None:
        log('train split is empty, nothing to train')
        return False
    models = build_models(config)
    if options.from_checkpoint:
        load_available(models, options.from_checkpoint)
    path = layout.checkpoint('vae')

    def checkpoint_fn(iteration):
        return save_parts(models, path, ('vae',), checkpoint_info('vae', iteration, config))

    result = pretrain_vae(models.vae, hq, config, checkpoint_fn=checkpoint_fn)
    train = config.train
    write_loss_log(layout.log_file('train-vae'), [
        LossRecord(iteration, 'vae', loss, 0.0,
                   cosine_lr(iteration, train.vae_iters, train.vae_lr, train.lr_min))
        for iteration, loss in enumerate(result.losses)])

    metrics = {'final_loss': result.final_loss}
    if os.path.isfile(layout.manifest('val-II')):
        held_out, _, _ = stack_items(load_split(layout, 'val-II'))
        metrics['val_psnr_db'] = reconstruction_psnr(models.vae, held_out)
    if len(hq) >= 2:
        probe = probe_error(models.vae.encoder, hq[:PROBE_IMAGES])
        metrics['probe_f_lq_mse'] = probe.f_lq_error
        metrics['probe_x0_mse'] = probe.x0_error
    save_parts(models, path, ('vae',), checkpoint_info('vae', train.vae_iters, config, metrics))
    for name, value in metrics.items():
        log(f'train-vae {name}: {value}')
    return bool(np.isfinite(result.final_loss)) or train.vae_iters == 0
