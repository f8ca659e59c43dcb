# -*- coding: utf-8 -*-
import json
import os
import pytest
from helpers.models import ConfigError, ModelConfig
from helpers.setting_helper import build_model_config, flatten_settings, get_base_directory,\
    get_config, get_used_configuration, known_setting_names, load_config_file,\
    load_settings_file, set_config, set_config_from_cmd


def write_json(path, tree):
    with open(path, 'w', encoding='utf-8') as outfile:
        json.dump(tree, outfile)
    return str(path)


def test_every_setting_has_a_command_line_name():
    assert sorted(known_setting_names()) == sorted(name for name, _ in ModelConfig.dotted_defaults())


def test_shipped_defaults_match_model_defaults():
    path = os.path.join(get_base_directory(), 'defaults', 'settings.json')
    with open(path, encoding='utf-8') as infile:
        assert json.load(infile) == ModelConfig().todata()
    assert build_model_config() == ModelConfig()


@pytest.mark.parametrize('arg, name, value', [
    ('steps=7', 'sampler.steps', 7),
    ('sampler.steps=9', 'sampler.steps', 9),
    ('guidance=2.5', 'sampler.cfg-scale', 2.5),
    ('capture-daam', 'sampler.capture-daam', True),
    ('capture-daam=no', 'sampler.capture-daam', False),
    ('key=wo_align', 'ablation.key', 'wo_align'),
])
def test_runtime_settings(arg, name, value):
    assert set_config_from_cmd(arg)
    assert get_config(name) == value
    assert get_used_configuration() == {name: value}


@pytest.mark.parametrize('arg', [
    'nope=1', 'steps=abc', 'cfg-scale=nan', 'steps=1=2', 'capture-daam=maybe', 'seed=1.5'])
def test_bad_runtime_settings_are_refused(arg):
    assert not set_config_from_cmd(arg)
    assert get_used_configuration() == {}


def test_unknown_alias_lookup():
    with pytest.raises(ConfigError):
        get_config('nope')


def test_runtime_values_reach_the_model_config():
    set_config_from_cmd('steps=7')
    set_config_from_cmd('seed=42')
    config = build_model_config()
    assert config.sampler.steps == 7
    assert config.general.seed == 42
    assert config.model == ModelConfig().model


def test_config_file_layer_and_precedence(tmp_path):
    load_config_file(write_json(tmp_path / 'run.json', {'sampler': {'steps': 4, 'kind': 'ddpm'}}))
    assert build_model_config().sampler.steps == 4
    set_config_from_cmd('steps=6')
    config = build_model_config()
    assert config.sampler.steps == 6
    assert config.sampler.kind == 'ddpm'


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(str(tmp_path / 'absent.json'))


def test_malformed_json_names_line_and_column(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{\n  "sampler": {\n    "steps": ,\n  }\n}\n', encoding='utf-8')
    with pytest.raises(ConfigError) as info:
        load_settings_file(str(path))
    assert f'{path}:3:' in str(info.value)


@pytest.mark.parametrize('tree', [
    {'sampler': {'stepz': 4}},
    {'sampling': {'steps': 4}},
    [1, 2],
])
def test_unknown_settings_in_files(tree, tmp_path):
    with pytest.raises(ConfigError):
        load_settings_file(write_json(tmp_path / 'bad.json', tree))


def test_flatten_settings():
    assert flatten_settings({'a': {'b': 1, 'C': {'d': 2}}}) == {'a.b': 1, 'a.c.d': 2}


def test_saved_settings_round_trip(tmp_path):
    set_config_from_cmd('steps=11')
    target = str(tmp_path / 'saved.json')
    set_config(target)
    with open(target, encoding='utf-8') as infile:
        saved = json.load(infile)
    assert saved['sampler']['steps'] == 11
    assert ModelConfig.from_data(saved) == build_model_config()


@pytest.mark.parametrize('tree, message', [
    ({'model': {'c-pen': 2}}, 'c-pen'),
    ({'model': {'image-size': 18}}, 'image-size'),
    ({'train': {'lr-encoder': 0.01}}, 'lr-encoder'),
    ({'sampler': {'kind': 'heun'}}, 'sampler.kind'),
    ({'ablation': {'key': 'wo_everything'}}, 'ablation.key'),
    ({'sampler': {'steps': 'ten'}}, 'sampler.steps'),
    ({'sampler': {'steps': True}}, 'sampler.steps'),
    ({'train': {'vae-iters': -1}}, 'vae-iters'),
])
def test_model_config_validation(tree, message):
    with pytest.raises(ConfigError) as info:
        ModelConfig.from_data(tree)
    assert message in str(info.value)


def test_model_config_round_trip(settings_tree):
    config = ModelConfig.from_data(settings_tree())
    assert ModelConfig.from_data(config.todata()) == config
    assert config.model.latent_size == 4
