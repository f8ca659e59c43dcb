# -*- coding: utf-8 -*-
from datetime import datetime
import os
import traceback
from helpers.models import ConfigError
from helpers.setting_helper import get_base_directory, get_used_configuration
from stages.ablate import run_stage as run_stage_ablate
from stages.daam import run_stage as run_stage_daam
from stages.evaluate import run_stage as run_stage_evaluate
from stages.finetune import run_stage as run_stage_finetune
from stages.infer import run_stage as run_stage_infer
from stages.pretrain_align import run_stage as run_stage_pretrain_align
from stages.synth_data import run_stage as run_stage_synth_data
from stages.train_prior import run_stage as run_stage_train_prior
from stages.train_vae import run_stage as run_stage_train_vae
from stages.utils import MissingPrerequisiteError

(EXIT_OK, EXIT_FAILURE, EXIT_USAGE) = range(3)

STAGE_FUNCS = {
    'synth-data': run_stage_synth_data,
    'train-vae': run_stage_train_vae,
    'train-prior': run_stage_train_prior,
    'pretrain-align': run_stage_pretrain_align,
    'finetune': run_stage_finetune,
    'infer': run_stage_infer,
    'eval': run_stage_evaluate,
    'daam': run_stage_daam,
    'ablate': run_stage_ablate,
}

FAILURES_LOG = 'failures.log'


def run_subcommand(name, options):
    """
    Runs one subcommand and turns its outcome into an exit code.

    Start and end are printed with timestamps. Failures print a diagnostic
    and are appended to failures.log.

    Returns:
        int: 0 when the stage wrote its outputs, 1 on a runtime failure or a
        stage reporting failure, 2 for usage and configuration errors.
    """
    if name not in STAGE_FUNCS:
        print(f'Unknown subcommand "{name}", expected one of {", ".join(STAGE_FUNCS)}')
        return EXIT_USAGE

    print(f"{datetime.now().strftime('%Y-%m-%d %H:%M:%S')} {name} started")
    try:
        succeeded = STAGE_FUNCS[name](options)
        exit_code = EXIT_OK if succeeded else EXIT_FAILURE
    except ConfigError as ex:
        print(f'Error: {ex}')
        exit_code = EXIT_USAGE
    except MissingPrerequisiteError as ex:
        print(f'Error: {ex}')
        write_failure(get_error_info(name, ex))
        exit_code = EXIT_FAILURE
    except Exception as ex: # pylint: disable=broad-exception-caught
        info = get_error_info(name, ex)
        print(''.join(info).replace('\n\n', '\n'))
        write_failure(info)
        exit_code = EXIT_FAILURE
    print(f"{datetime.now().strftime('%Y-%m-%d %H:%M:%S')} {name} ended (exit code {exit_code})")
    return exit_code


def write_failure(info):
    with open(FAILURES_LOG, 'a', encoding='utf-8') as outfile:
        outfile.writelines(info)


def restart_failures_log():
    """
    Restart failures log by removing all content in it,
    this is so we always start fresh.
    """
    with open(FAILURES_LOG, 'w', encoding='utf-8') as outfile:
        outfile.writelines('')


def get_error_info(subcommand, ex):
    """
    Generate error information for diagnostic purposes: dependency versions,
    date and time, subcommand, the values set for this run and the traceback.

    Returns:
        list: A list of strings containing the error information.
    """
    result = []
    result.append('###############################################')
    result.extend(get_versions())
    result.extend(['###############################################',
        '\n# Information:',
        f"\nDateTime: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}",
        f'\nSubcommand: {subcommand}',
        '\n###############################################'
        '\n# Used Configuration:'
    ])
    for name, value in get_used_configuration().items():
        result.append(f"\n{name}: {value}")

    result.append('\n###############################################\n')
    result.extend(traceback.format_exception(ex, ex, ex.__traceback__))
    result.append('###############################################\n\n')
    return result


def get_versions():
    """
    Dependency information from requirements.txt.

    Returns:
        list: A list of strings with one line per pinned dependency.
    """
    result = ['\n# Version information (from requirements.txt)']
    file_path = os.path.join(get_base_directory(), 'requirements.txt')
    if not os.path.isfile(file_path):
        result.append('\nrequirements.txt not found\n')
        return result
    result.append("\nDependencies:")
    with open(file_path, encoding='utf-8') as infile:
        for line in infile:
            line = line.strip()
            if len(line) == 0 or line.startswith('#'):
                continue
            result.append(f"\n- {line}")
    result.append("\n")
    return result
