# -*- coding: utf-8 -*-
import math
import os
from core.evaluation import run_daam
from stages.infer import load_restoration_models
from stages.utils import ensure_parent_path, load_split, log, validation_split


def summary_line(results):
    """``mean, <inside>, <shuffled>, <wins>/<count>`` over non-degenerate maps."""
    valid = [result for result in results if not result.degenerate]
    if not valid:
        return f'mean, nan, nan, 0/{len(results)}'
    inside = math.fsum(result.inside for result in valid) / len(valid)
    shuffled = math.fsum(result.shuffled for result in valid) / len(valid)
    wins = sum(1 for result in valid if result.inside > result.shuffled)
    return f'mean, {inside!r}, {shuffled!r}, {wins}/{len(valid)}'


def write_daam_report(output_filename, results):
    ensure_parent_path(output_filename)
    with open(output_filename, 'w', encoding='utf-8', newline='') as outfile:
        outfile.write('# index, word, inside, shuffled, degenerate\n')
        for result in results:
            outfile.write(result.toline() + '\n')
        outfile.write(summary_line(results) + '\n')


def run_stage(options):
    """
    Restores ``eval.daam-images`` validation images with attention capture,
    writes restored images and heatmaps to ``daam/`` and reports the mass of
    each heatmap inside the true shape mask against a shuffled mask.
    """
    config = options.config
    layout = options.layout
    level = options.level or 'II'
    take = config.eval.daam_images if options.input_take < 0 else options.input_take
    items = load_split(layout, validation_split(level), options.input_skip, take)
    models = load_restoration_models(options)
    results = run_daam(models, items, seed=config.general.seed,
                       out_dir=layout.folder('daam'))
    output = options.output_filename or os.path.join(layout.folder('reports'),
                                                     f'daam-{level}.txt')
    write_daam_report(output, results)
    log(f'daam {level}: {summary_line(results)}')
    return True
