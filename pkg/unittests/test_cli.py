# -*- coding: utf-8 -*-
import json
import os
import shutil
import pytest
from default import main
from helpers.models import ModelConfig
from helpers.stage_helper import EXIT_USAGE, run_subcommand
from helpers.setting_helper import build_model_config
from stages.utils import RunLayout, StageOptions


@pytest.fixture
def run_dir(tmp_path, monkeypatch, settings_tree):
    """Works inside tmp_path with the tiny settings and the run output in ``run/``."""
    monkeypatch.chdir(tmp_path)
    with open(tmp_path / 'tiny.json', 'w', encoding='utf-8') as outfile:
        json.dump(settings_tree(), outfile)
    return tmp_path


def cli(run_dir, *args):
    """Runs default.py with the tiny settings and returns its exit code."""
    argv = list(args) + ['-c', str(run_dir / 'tiny.json'),
                         '-s', f'general.output={run_dir / "run"}']
    with pytest.raises(SystemExit) as info:
        main(argv)
    return info.value.code or 0


def test_help_lists_every_setting(capsys):
    with pytest.raises(SystemExit) as info:
        main(['--help'])
    assert info.value.code in (0, None)
    out = capsys.readouterr().out
    assert 'synth-data' in out
    for name, _ in ModelConfig.dotted_defaults():
        assert f'--setting {name}=' in out


@pytest.mark.parametrize('args', [
    ['unknown-stage'],
    ['eval', '--level', 'IV'],
    ['eval', '-s', 'nope=1'],
    ['eval', '--n', 'many'],
    ['eval', 'infer'],
    ['eval', '--bogus'],
])
def test_usage_errors_exit_2(args, run_dir):
    assert cli(run_dir, *args) == EXIT_USAGE


def test_bad_config_file_exits_2(run_dir):
    (run_dir / 'bad.json').write_text('{"sampler": {"stepz": 1}}', encoding='utf-8')
    with pytest.raises(SystemExit) as info:
        main(['eval', '-c', str(run_dir / 'bad.json')])
    assert info.value.code == EXIT_USAGE


def test_empty_synthetic_splits(run_dir):
    assert cli(run_dir, 'synth-data', '--n', '0') == 0
    for split in ('train', 'val-I', 'val-II', 'val-III'):
        manifest = run_dir / 'run' / 'data' / split / 'manifest.txt'
        assert manifest.read_text(encoding='utf-8') == ''


def test_missing_prerequisite_names_the_command(run_dir, capsys):
    assert cli(run_dir, 'synth-data', '--n', '2') == 0
    capsys.readouterr()
    assert cli(run_dir, 'train-prior') == 1
    assert 'train-vae' in capsys.readouterr().out
    assert 'train-vae' in (run_dir / 'failures.log').read_text(encoding='utf-8')


def test_save_setting_writes_effective_config(run_dir):
    target = run_dir / 'saved.json'
    assert cli(run_dir, '--steps', '5', '--ss', str(target)) == 0
    saved = json.loads(target.read_text(encoding='utf-8'))
    assert saved['sampler']['steps'] == 5
    assert saved['model']['image-size'] == 16
    assert saved['general']['output'] == str(run_dir / 'run')


def test_run_subcommand_exit_codes(run_dir):
    options = StageOptions(config=build_model_config(), layout=RunLayout(str(run_dir / 'run')))
    assert run_subcommand('nope', options) == EXIT_USAGE
    assert run_subcommand('daam', StageOptions(config=options.config, layout=options.layout,
                                               level='IV')) == EXIT_USAGE
    assert run_subcommand('eval', options) == 1


def test_tiny_pipeline_end_to_end(run_dir):
    run = run_dir / 'run'
    assert cli(run_dir, 'synth-data') == 0
    assert cli(run_dir, 'train-vae') == 0
    assert cli(run_dir, 'train-prior') == 0
    assert cli(run_dir, 'pretrain-align') == 0
    assert cli(run_dir, 'finetune') == 0
    for name in ('vae', 'prior', 'align', 'joint'):
        assert (run / 'checkpoints' / name / 'manifest.txt').is_file()
    assert (run / 'logs' / 'finetune.log').is_file()

    assert cli(run_dir, 'eval', '-o', str(run_dir / 'first.txt')) == 0
    assert cli(run_dir, 'eval', '-o', str(run_dir / 'second.txt')) == 0
    first = (run_dir / 'first.txt').read_bytes()
    assert first == (run_dir / 'second.txt').read_bytes()
    assert b'# restored II' in first
    assert b'# lq II' in first

    assert cli(run_dir, 'infer', '-o', str(run_dir / 'out.ppm'), '--capture-daam') == 0
    assert (run_dir / 'out.ppm').read_bytes()[:2] == b'P6'

    (run_dir / 'photo.png').write_bytes(b'not an image')
    assert cli(run_dir, 'infer', '-i', str(run_dir / 'photo.png')) == EXIT_USAGE

    assert cli(run_dir, 'daam') == 0
    lines = (run / 'reports' / 'daam-II.txt').read_text(encoding='utf-8').splitlines()
    assert lines[0].startswith('# index')
    assert len(lines) == 2 + 2
    assert lines[-1].startswith('mean, ')
    assert os.listdir(run / 'daam')

    assert cli(run_dir, 'ablate', '--key', 'wo_align') == 0
    report = (run / 'reports' / 'ablate-wo_align.txt').read_text(encoding='utf-8')
    for source in ('# ablation:wo_align II', '# full II', '# lq II'):
        assert source in report
    assert (run / 'ablations' / 'wo_align' / 'checkpoints' / 'joint' / 'manifest.txt').is_file()


def tree_bytes(folder):
    """Relative path to file contents for every file below ``folder``."""
    contents = {}
    for root, _, files in os.walk(folder):
        for name in files:
            path = os.path.join(root, name)
            with open(path, 'rb') as infile:
                contents[os.path.relpath(path, folder)] = infile.read()
    return contents


def test_reruns_with_the_same_seed_are_byte_identical(run_dir):
    run = run_dir / 'run'
    runs = []
    for _ in range(2):
        if run.exists():
            shutil.rmtree(run)
        assert cli(run_dir, 'synth-data', '--n', '3') == 0
        assert cli(run_dir, 'train-vae') == 0
        assert cli(run_dir, 'train-prior') == 0
        runs.append((tree_bytes(run / 'data'),
                     (run / 'logs' / 'train-vae.log').read_bytes(),
                     (run / 'logs' / 'train-prior.log').read_bytes()))
    first, second = runs
    assert first[0]
    assert first[0] == second[0]
    assert first[1] == second[1]
    assert first[2] == second[2]
