# -*- coding: utf-8 -*-
from dataclasses import dataclass
from datetime import datetime
import os
from core.degrade import load_dataset
from engines.checkpoint_engine import read_checkpoint, write_checkpoint, MANIFEST_NAME
from engines.csv_engine import write_report as csv_write_report
from engines.json_engine import write_report as json_write_report
from engines.markdown_engine import write_report as markdown_write_report
from engines.text_engine import write_report as text_write_report
from helpers.models import ConfigError

# which subcommand produces each checkpoint
CHECKPOINT_COMMANDS = {
    'vae': 'train-vae',
    'prior': 'train-prior',
    'align': 'pretrain-align',
    'joint': 'finetune',
}


@dataclass
class StageOptions: # pylint: disable=too-many-instance-attributes
    """What a subcommand runs with: resolved config, run layout and the command-line inputs."""
    config: object
    layout: object
    level: str = None
    n: int = None
    input_filename: str = ''
    input_skip: int = 0
    input_take: int = -1
    output_filename: str = ''
    from_checkpoint: str = ''


class MissingPrerequisiteError(FileNotFoundError):
    """A stage input is missing; the message names the command that creates it."""

    def __init__(self, path, command):
        self.path = path
        self.command = command
        super().__init__(f'required input "{path}" is missing, run "python default.py {command}" first')


def log(message):
    print(f"{datetime.now().strftime('%Y-%m-%d %H:%M:%S')} {message}")


class RunLayout:
    """
    Folder layout of a run under ``general.output``.

    Ablation variants get their own root for checkpoints, logs and reports
    but share the datasets and the VAE and prior checkpoints of the main run.
    """

    def __init__(self, root, shared_root=None):
        self.root = root
        self.shared_root = shared_root or root

    def data_dir(self, split):
        return os.path.join(self.shared_root, 'data', split)

    def manifest(self, split):
        return os.path.join(self.data_dir(split), 'manifest.txt')

    def checkpoint(self, name):
        base = self.shared_root if name in ('vae', 'prior') else self.root
        return os.path.join(base, 'checkpoints', name)

    def ablation(self, key):
        return RunLayout(os.path.join(self.shared_root, 'ablations', key), self.shared_root)

    def folder(self, name):
        path = os.path.join(self.root, name)
        os.makedirs(path, exist_ok=True)
        return path

    def log_file(self, name):
        return os.path.join(self.folder('logs'), f'{name}.log')


def require_manifest(layout, split):
    path = layout.manifest(split)
    if not os.path.isfile(path):
        raise MissingPrerequisiteError(path, 'synth-data')
    return path


def load_split(layout, split, skip=0, take=-1):
    return load_dataset(require_manifest(layout, split), skip, take)


def require_checkpoint(layout, name):
    path = layout.checkpoint(name)
    if not os.path.isfile(os.path.join(path, MANIFEST_NAME)):
        raise MissingPrerequisiteError(path, CHECKPOINT_COMMANDS[name])
    return path


def load_parts(models, path, parts):
    """Loads the listed components of ``models`` from a checkpoint directory."""
    state, info = read_checkpoint(path)
    models.load_state_dict(state, parts)
    return info


def load_available(models, path):
    """
    Loads every component the checkpoint holds (used by --from-checkpoint).

    Returns:
        list[str]: The loaded component names.
    """
    if not os.path.isfile(os.path.join(path, MANIFEST_NAME)):
        raise MissingPrerequisiteError(path, 'a training stage')
    state, _ = read_checkpoint(path)
    parts = [name for name in models.components()
             if any(key.startswith(f'{name}.') for key in state)]
    models.load_state_dict(state, parts)
    return parts


def save_parts(models, path, parts, info):
    write_checkpoint(path, models.state_dict(parts), info)
    log(f'checkpoint written to {path}')
    return path


def validation_split(level):
    if level not in ('I', 'II', 'III'):
        raise ConfigError(f'unknown level "{level}", expected I, II or III')
    return f'val-{level}'


def write_report(output_filename, reports):
    """
    Writes metric reports, choosing the engine by file ending: .json, .csv
    and .md get their engines, anything else the line-delimited text format.
    """
    if len(output_filename) == 0:
        return
    file_ending = os.path.splitext(output_filename)[1].lower()
    if file_ending == ".json":
        write_reports = json_write_report
    elif file_ending == ".csv":
        write_reports = csv_write_report
    elif file_ending == ".md":
        write_reports = markdown_write_report
    else:
        write_reports = text_write_report

    ensure_parent_path(output_filename)
    write_reports(output_filename, reports)


def ensure_parent_path(output_filename):
    """
    Ensures that the parent directory of the output file exists.
    """
    parent_dir = os.path.dirname(os.path.abspath(output_filename))
    if not os.path.exists(parent_dir):
        os.makedirs(parent_dir)


def checkpoint_info(stage, iteration, config, metrics=None):
    return {
        'stage': stage,
        'iteration': iteration,
        'metrics': metrics or {},
        'config': config.todata()
    }
