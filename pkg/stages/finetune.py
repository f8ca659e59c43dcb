# -*- coding: utf-8 -*-
from core.pipeline import COMPONENTS
from core.train import STAGE_JOINT, build_ablation, joint_configs, run_stage as run_training
from engines.loss_log_engine import write_loss_log
from stages.pretrain_align import prepared_models
from stages.train_prior import training_data
from stages.utils import checkpoint_info, load_available, load_parts, log,\
    require_checkpoint, save_parts


def run_stage(options, plan=None):
    """
    Jointly fine-tunes LQ encoder, alignment module and denoiser (or the
    groups the ablation plan names, pass by pass) and saves every component.
    """
    config = options.config
    layout = options.layout
    plan = plan or build_ablation(config.ablation.key, config)
    models = prepared_models(options, plan)
    if plan.pretrain_align:
        load_parts(models, require_checkpoint(layout, 'align'), ('align',))
    if options.from_checkpoint:
        load_available(models, options.from_checkpoint)
    data = training_data(options, models)
    if data is None:
        log('train split is empty, nothing to train')
        return False
    path = layout.checkpoint('joint')
    log_file = layout.log_file('finetune')
    done = 0
    for index, stage in enumerate(joint_configs(config, plan)):
        offset = done

        def checkpoint_fn(iteration, offset=offset):
            return save_parts(models, path, COMPONENTS,
                              checkpoint_info(STAGE_JOINT, offset + iteration, config,
                                              {'key': plan.key}))

        log(f'finetune pass {index + 1}: trainable {", ".join(stage.trainable)}')
        result = run_training(stage, models, data, checkpoint_fn=checkpoint_fn)
        write_loss_log(log_file, result.records, append=index > 0)
        done += stage.iters
        if result.records:
            log(f'{stage.name} final loss: {result.losses[-1]!r}')
    return True
