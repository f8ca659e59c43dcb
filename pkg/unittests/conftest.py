# -*- coding: utf-8 -*-
import copy
import numpy as np
import pytest
from helpers.models import ModelConfig
from helpers.setting_helper import reset_config

# every network at its smallest valid width, 16x16 images and 4x4 latents
TINY_SETTINGS = {
    'model': {
        'image-size': 16,
        'c-pen': 8,
        'c-lat': 2,
        'c-align': 4,
        'align-width': 8,
        'align-heads': 2,
        'ffn-ratio': 2,
        'unet-base': 8,
        'unet-mult': 2,
        'unet-heads': 2,
        'text-dim': 8,
        'caption-length': 7,
        'groups': 4
    },
    'schedule': {
        'timesteps': 100
    },
    'sampler': {
        'steps': 3
    },
    'train': {
        'batch-size': 2,
        'vae-iters': 2,
        'prior-iters': 2,
        'pretrain-iters': 2,
        'joint-iters': 2,
        'checkpoint-every': 0
    },
    'data': {
        'train-size': 4,
        'val-size': 2
    },
    'eval': {
        'daam-images': 2
    }
}


def tiny_settings(**sections):
    """TINY_SETTINGS with per-section overrides merged in."""
    settings = copy.deepcopy(TINY_SETTINGS)
    for section, values in sections.items():
        settings.setdefault(section, {}).update(values)
    return settings


@pytest.fixture
def tiny_config():
    return ModelConfig.from_data(tiny_settings())


@pytest.fixture
def make_config():
    def _make(**sections):
        return ModelConfig.from_data(tiny_settings(**sections))
    return _make


@pytest.fixture
def settings_tree():
    return tiny_settings


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def clean_settings():
    """Runtime settings are module globals; every test starts from the shipped defaults."""
    reset_config()
    yield
    reset_config()
