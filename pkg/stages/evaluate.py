# -*- coding: utf-8 -*-
import os
from core.evaluation import run_eval
from stages.infer import load_restoration_models
from stages.utils import load_split, log, validation_split, write_report


def evaluate_split(models, options, level, restored_dir=None):
    """Restored and LQ-baseline reports for one validation split."""
    layout = options.layout
    split = validation_split(level)
    items = load_split(layout, split, options.input_skip, options.input_take)
    return run_eval(models, items, level, dataset=layout.manifest(split),
                    seed=options.config.general.seed, restored_dir=restored_dir)


def run_stage(options):
    """
    Restores the validation split of ``--level`` and reports per-image and
    mean PSNR/SSIM next to the LQ-input baseline.

    Without ``--output`` the reports go to ``reports/eval-<level>.txt`` and
    ``reports/eval-<level>-lq.txt``; with it both land in that one file.
    """
    level = options.level or 'II'
    models = load_restoration_models(options)
    report, baseline = evaluate_split(models, options, level,
                                      restored_dir=os.path.join(options.layout.root,
                                                                'restored', f'val-{level}'))
    if options.output_filename:
        write_report(options.output_filename, [report, baseline])
    else:
        folder = options.layout.folder('reports')
        write_report(os.path.join(folder, f'eval-{level}.txt'), [report])
        write_report(os.path.join(folder, f'eval-{level}-lq.txt'), [baseline])
    log(f'eval {level}: {len(report.items)} images, '
        f'psnr {report.mean_psnr:.3f} dB (lq {baseline.mean_psnr:.3f} dB), '
        f'ssim {report.mean_ssim:.4f} (lq {baseline.mean_ssim:.4f})')
    return True
