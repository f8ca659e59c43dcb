# -*- coding: utf-8 -*-
from dataclasses import replace
import os
from core.pipeline import build_models, COMPONENTS
from core.train import build_ablation
from stages import finetune, pretrain_align
from stages.evaluate import evaluate_split
from stages.utils import load_parts, log, require_checkpoint, write_report


def run_stage(options):
    """
    Trains the ``--key`` variant with the main run's seed and budget (on the
    shared VAE and prior) and compares it with the full model and the LQ
    input on the validation split of ``--level``.

    The comparison goes to ``reports/ablate-<key>.txt`` (or ``--output``)
    with the sources ``ablation:<key>``, ``full`` and ``lq``.
    """
    config = options.config
    layout = options.layout
    key = config.ablation.key
    level = options.level or 'II'
    plan = build_ablation(key, config)
    full_checkpoint = require_checkpoint(layout, 'joint')

    variant = replace(options, layout=layout.ablation(key), from_checkpoint='')
    log(f'ablation "{key}": align {plan.align_kind}, tap {plan.tap}, '
        f'pretrain-align {"run" if plan.pretrain_align else "skip"}, '
        f'{len(plan.joint_passes)} joint pass(es)')
    if not pretrain_align.run_stage(variant, plan):
        return False
    if not finetune.run_stage(variant, plan):
        return False

    variant_models = build_models(config, plan)
    load_parts(variant_models, require_checkpoint(variant.layout, 'joint'), COMPONENTS)
    variant_report, baseline = evaluate_split(variant_models, options, level)
    variant_report.source = f'ablation:{key}'

    full_models = build_models(config, build_ablation('full', config))
    load_parts(full_models, full_checkpoint, COMPONENTS)
    full_report, _ = evaluate_split(full_models, options, level)
    full_report.source = 'full'

    output = options.output_filename or os.path.join(layout.folder('reports'),
                                                     f'ablate-{key}.txt')
    write_report(output, [variant_report, full_report, baseline])
    log(f'ablation "{key}" on {level}: psnr {variant_report.mean_psnr:.3f} dB, '
        f'full {full_report.mean_psnr:.3f} dB, lq {baseline.mean_psnr:.3f} dB')
    return True
