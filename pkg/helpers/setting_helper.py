# -*- coding: utf-8 -*-
import json
import math
import os
from pathlib import Path
from helpers.models import ConfigError, ModelConfig

config = {}
config_file_values = {}

config_mapping = {
    ("seed", "general.seed"): "int|general.seed",
    ("output", "general.output"): "string|general.output",
    ("image-size", "model.image-size"): "int|model.image-size",
    ("c-pen", "model.c-pen"): "int|model.c-pen",
    ("c-lat", "model.c-lat"): "int|model.c-lat",
    ("c-align", "model.c-align"): "int|model.c-align",
    ("align-width", "model.align-width"): "int|model.align-width",
    ("align-heads", "model.align-heads"): "int|model.align-heads",
    ("ffn-ratio", "model.ffn-ratio"): "int|model.ffn-ratio",
    ("unet-base", "model.unet-base"): "int|model.unet-base",
    ("unet-mult", "model.unet-mult"): "int|model.unet-mult",
    ("unet-heads", "model.unet-heads"): "int|model.unet-heads",
    ("text-dim", "model.text-dim"): "int|model.text-dim",
    ("caption-length", "model.caption-length"): "int|model.caption-length",
    ("groups", "model.groups"): "int|model.groups",
    ("timesteps", "schedule.timesteps"): "int|schedule.timesteps",
    ("beta-min", "schedule.beta-min"): "float|schedule.beta-min",
    ("beta-max", "schedule.beta-max"): "float|schedule.beta-max",
    ("sampler", "sampler.kind"): "string|sampler.kind",
    ("steps", "sampler.steps"): "int|sampler.steps",
    ("cfg-scale", "sampler.cfg-scale", "guidance"): "float|sampler.cfg-scale",
    ("capture-daam", "sampler.capture-daam"): "bool|sampler.capture-daam",
    ("batch-size", "train.batch-size"): "int|train.batch-size",
    ("vae-iters", "train.vae-iters"): "int|train.vae-iters",
    ("vae-lr", "train.vae-lr"): "float|train.vae-lr",
    ("prior-iters", "train.prior-iters"): "int|train.prior-iters",
    ("prior-lr", "train.prior-lr"): "float|train.prior-lr",
    ("pretrain-iters", "train.pretrain-iters"): "int|train.pretrain-iters",
    ("pretrain-lr", "train.pretrain-lr"): "float|train.pretrain-lr",
    ("joint-iters", "train.joint-iters"): "int|train.joint-iters",
    ("lr-unet", "train.lr-unet"): "float|train.lr-unet",
    ("lr-encoder", "train.lr-encoder"): "float|train.lr-encoder",
    ("lr-min", "train.lr-min"): "float|train.lr-min",
    ("caption-dropout", "train.caption-dropout", "dropout"): "float|train.caption-dropout",
    ("weight-decay", "train.weight-decay"): "float|train.weight-decay",
    ("grad-clip", "train.grad-clip"): "float|train.grad-clip",
    ("checkpoint-every", "train.checkpoint-every"): "int|train.checkpoint-every",
    ("train-size", "data.train-size"): "int|data.train-size",
    ("val-size", "data.val-size"): "int|data.val-size",
    ("train-level", "data.train-level"): "string|data.train-level",
    ("key", "ablation.key"): "string|ablation.key",
    ("align", "ablation.align"): "string|ablation.align",
    ("align-pretrain", "ablation.align-pretrain"): "string|ablation.align-pretrain",
    ("daam-images", "eval.daam-images"): "int|eval.daam-images"
}


def get_base_directory():
    return Path(os.path.dirname(os.path.realpath(__file__)) + os.path.sep).parent


def known_setting_names():
    return [value.split('|')[1] for value in config_mapping.values()]


def get_config(name):
    """
    Retrieve a configuration value based on the specified name.

    Lookup order: values set for this run (flags and --setting), the
    --config file, settings.json in the repository root and finally
    defaults/settings.json.

    Args:
        name (str): Dotted setting name or one of its aliases.

    Returns:
        The configuration value if found, otherwise None.
    """
    if '.' not in name:
        config_name = get_setting_name(name)
        if config_name is None:
            raise ConfigError(f'"{name}" is not a known setting')
        name = config_name.split('|')[1]

    name = name.lower()
    if name in config:
        return config[name]

    if name in config_file_values:
        return config_file_values[name]

    value = get_config_from_module(name, 'settings.json')
    if value is not None:
        return value

    return get_config_from_module(name, f'defaults{os.path.sep}settings.json')


def set_runtime_config_only(name, value):
    """
    Set a configuration value for the current run only.

    Args:
        name (str): The name of the configuration setting.
        value: The value to set for the specified configuration.
    """
    name = name.lower()
    config[name] = value


def reset_config():
    """Forgets every runtime value and the loaded --config file."""
    config.clear()
    config_file_values.clear()


def flatten_settings(tree, prefix=''):
    """Nested settings tree to ``{dotted.name: value}``."""
    result = {}
    for key, value in tree.items():
        name = f'{prefix}{key}'
        if isinstance(value, dict):
            result.update(flatten_settings(value, f'{name}.'))
        else:
            result[name.lower()] = value
    return result


def load_settings_file(file_path):
    """
    Reads a settings JSON file and checks every key against config_mapping.

    Raises:
        ConfigError: On malformed JSON (with file, line and column), a
            non-object root or an unknown key.
    """
    with open(file_path, encoding='utf-8') as json_file:
        try:
            tree = json.load(json_file)
        except json.JSONDecodeError as ex:
            raise ConfigError(
                f'{file_path}:{ex.lineno}:{ex.colno}: malformed settings JSON, {ex.msg}') from ex
    if not isinstance(tree, dict):
        raise ConfigError(f'{file_path}: settings root must be an object')
    values = flatten_settings(tree)
    known = known_setting_names()
    for name in values:
        if name not in known:
            raise ConfigError(f'{file_path}: unknown setting "{name}"')
    return values


def load_config_file(file_path):
    """
    Uses ``file_path`` as the --config layer.

    Raises:
        ConfigError: If the file is missing, malformed or has unknown keys.
    """
    if not os.path.isfile(file_path):
        raise ConfigError(f'config file "{file_path}" does not exist')
    config_file_values.clear()
    config_file_values.update(load_settings_file(file_path))


def set_config(module_name):
    """
    Writes the effective configuration (every known setting) as nested JSON.

    Args:
        module_name (str): Target file, relative to the repository root
            unless absolute.
    """
    file_path = module_name
    if not os.path.isabs(module_name):
        file_path = f'{get_base_directory()}{os.path.sep}{module_name}'

    with open(file_path, 'w', encoding='utf-8') as outfile:
        json.dump(build_model_config().todata(), outfile, indent=4)


def get_config_from_module(config_name, module_name):
    """
    Retrieves the configuration value for a given name from the specified module file.

    Parameters:
    config_name (str): The name of the configuration value to retrieve.
    module_name (str): The name of the module the values should be retrieved from.

    Returns:
    The configuration value associated with the given config_name and module_name.
    """
    file_path = f'{get_base_directory()}{os.path.sep}{module_name}'
    if not os.path.isfile(file_path):
        return None

    return load_settings_file(file_path).get(config_name)


def set_config_from_cmd(arg):
    """
    Set configuration settings based on user input.

    Args:
        arg (str): Input argument in the format "<setting_name>=<value>";
            a bare name sets a bool setting to true.

    Returns:
        bool: False when the name is unknown or the value does not parse.
    """
    pair = arg.split('=')
    nof_pair = len(pair)
    if nof_pair > 2:
        return False
    name = pair[0].lower()
    value = 'true'

    if nof_pair > 1:
        value = pair[1]

    config_name = get_setting_name(name)
    if config_name is None:
        return False

    config_name_pair = config_name.split('|')
    config_name_type = config_name_pair[0]
    config_name = config_name_pair[1]

    value_type_handlers = {
        "bool": handle_cmd_bool_value,
        "int": handle_cmd_int_value,
        "float": handle_cmd_float_value,
        "string": handle_cmd_str_value,
    }
    config_value = value_type_handlers[config_name_type](config_name, value)
    if config_value is None:
        return False
    set_runtime_config_only(config_name, config_value)
    return True


def get_setting_name(name):
    """
    Returns the ``type|dotted.name`` entry for a given alias, or None.
    """
    for aliases, setting_name in config_mapping.items():
        if name in aliases:
            return setting_name
    return None


def handle_cmd_bool_value(setting_name, value):
    """
    Converts a string value to a boolean based on common true/false representations.

    Returns:
        bool or None: The converted boolean value if valid, otherwise None.
    """
    setting_value = None
    if value in ('true', 'True', 'yes', 'Y', 'y'):
        setting_value = True
    elif value in ('false', 'False', 'no', 'N', 'n'):
        setting_value = False
    else:
        print(
            'Warning: Ignoring setting, '
            f'"{setting_name}":s value has to be true or false.')
    return setting_value


def handle_cmd_int_value(setting_name, value):
    setting_value = None
    try:
        setting_value = int(value)
    except (TypeError, ValueError):
        print(f'Warning: Ignoring setting, "{setting_name}":s value has to be a whole number.')
    return setting_value


def handle_cmd_float_value(setting_name, value):
    setting_value = None
    try:
        setting_value = float(value)
    except (TypeError, ValueError):
        print(f'Warning: Ignoring setting, "{setting_name}":s value has to be a number.')
        return None
    if not math.isfinite(setting_value):
        print(f'Warning: Ignoring setting, "{setting_name}":s value has to be finite.')
        return None
    return setting_value


def handle_cmd_str_value(_, value):
    return value


def get_used_configuration():
    """
    Returns a copy of the values set for the current run.

    Returns:
        dict: A shallow copy of the runtime configuration dictionary.
    """
    return config.copy()


def build_model_config():
    """
    Resolves every known setting through the layers and builds a ModelConfig.

    Raises:
        ConfigError: If a resolved value has the wrong type or fails validation.
    """
    data = {}
    for name in known_setting_names():
        value = get_config(name)
        if value is None:
            continue
        section, key = name.split('.', 1)
        data.setdefault(section, {})[key] = value
    return ModelConfig.from_data(data)
