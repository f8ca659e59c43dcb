# -*- coding: utf-8 -*-
import json
import os
from engines.ftnsr_engine import decode_tensor, write_tensor
from helpers.hash_helper import create_sha256_hash

MANIFEST_NAME = 'manifest.txt'
INFO_NAME = 'info.json'


def write_checkpoint(directory, state, info=None):
    """
    Saves named parameters as a checkpoint directory.

    Every entry becomes ``<name>.ftnsr``; ``manifest.txt`` lists
    ``name, shape, sha256`` per entry (shape extents joined with ``x``) and
    ``info.json`` holds ``info``.

    Args:
        directory (str): Target folder, created when missing.
        state (dict[str, numpy.ndarray]): Parameter values by dotted name.
        info (dict, optional): Stage, iteration, metrics and configuration.

    Returns:
        str: ``directory``.
    """
    os.makedirs(directory, exist_ok=True)
    lines = []
    for name in sorted(state):
        content = write_tensor(os.path.join(directory, f'{name}.ftnsr'), state[name])
        shape = 'x'.join(str(extent) for extent in state[name].shape) or 'scalar'
        lines.append(f'{name}, {shape}, {create_sha256_hash(content)}')
    with open(os.path.join(directory, MANIFEST_NAME), 'w', encoding='utf-8',
              newline='\n') as outfile:
        outfile.write('\n'.join(lines) + ('\n' if lines else ''))
    with open(os.path.join(directory, INFO_NAME), 'w', encoding='utf-8',
              newline='\n') as outfile:
        json.dump(info or {}, outfile, indent=4, sort_keys=True)
    return directory


def read_checkpoint_info(directory):
    filename = os.path.join(directory, INFO_NAME)
    if not os.path.isfile(filename):
        return {}
    with open(filename, encoding='utf-8') as infile:
        return json.load(infile)


def read_checkpoint(directory):
    """
    Loads a checkpoint written by ``write_checkpoint``.

    Returns:
        tuple: (state dict of float32 arrays, info dict)

    Raises:
        FileNotFoundError: If the directory or its manifest is missing.
        ValueError: If a file's checksum or shape differs from the manifest.
    """
    manifest = os.path.join(directory, MANIFEST_NAME)
    if not os.path.isfile(manifest):
        raise FileNotFoundError(f'no checkpoint manifest at {manifest}')
    state = {}
    with open(manifest, encoding='utf-8') as infile:
        for line in infile:
            line = line.strip()
            if not line:
                continue
            name, shape, checksum = [part.strip() for part in line.split(',')]
            with open(os.path.join(directory, f'{name}.ftnsr'), 'rb') as tensor_file:
                content = tensor_file.read()
            if create_sha256_hash(content) != checksum:
                raise ValueError(f'checkpoint {directory}: checksum mismatch for "{name}"')
            value = decode_tensor(content)
            stored = 'x'.join(str(extent) for extent in value.shape) or 'scalar'
            if stored != shape:
                raise ValueError(
                    f'checkpoint {directory}: "{name}" has shape {stored}, manifest says {shape}')
            state[name] = value
    return state, read_checkpoint_info(directory)
