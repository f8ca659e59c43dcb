# -*- coding: utf-8 -*-
import csv
import os
import struct
import numpy as np
import pytest
from core.train import LossRecord
from engines import csv_engine, json_engine, markdown_engine, text_engine
from engines.checkpoint_engine import read_checkpoint, write_checkpoint
from engines.ftnsr_engine import MAGIC, decode_tensor, encode_tensor, read_tensor, write_tensor
from engines.loss_log_engine import read_loss_log, write_loss_log
from engines.manifest_engine import ManifestEntry, read_manifest, write_manifest
from engines.ppm_engine import read_ppm, to_uint8, write_heatmap, write_ppm
from engines.utils import use_item
from helpers.models import MetricReport


def make_report(level='II', source='restored'):
    report = MetricReport('val-II', level, source)
    report.add(0, 21.5, 0.5)
    report.add(1, 23.25, 0.75)
    return report


def test_ftnsr_header_layout():
    content = encode_tensor(np.arange(6, dtype=np.float64).reshape(2, 3))
    assert content[:6] == MAGIC
    assert content[6] == 2
    assert struct.unpack('<II', content[7:15]) == (2, 3)
    assert struct.unpack('<6f', content[15:]) == (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)


def test_ftnsr_file_round_trip(tmp_path, rng):
    array = rng.standard_normal((2, 3, 4)).astype(np.float32)
    path = str(tmp_path / 'x.ftnsr')
    write_tensor(path, array)
    loaded = read_tensor(path)
    assert loaded.dtype == np.float32
    np.testing.assert_array_equal(loaded, array)


def test_ftnsr_rejects_bad_files():
    content = encode_tensor(np.ones((2, 2)))
    with pytest.raises(ValueError):
        decode_tensor(b'NOTNSR' + content[6:])
    with pytest.raises(ValueError):
        decode_tensor(content[:-1])
    with pytest.raises(ValueError):
        decode_tensor(content + b'\x00')
    with pytest.raises(ValueError):
        decode_tensor(MAGIC)


def test_checkpoint_round_trip(tmp_path, rng):
    state = {'unet.conv_in.weight': rng.standard_normal((4, 2, 3, 3)).astype(np.float32),
             'text.table': rng.standard_normal((5, 3)).astype(np.float32)}
    directory = write_checkpoint(str(tmp_path / 'ckpt'), state, {'stage': 'prior', 'iteration': 3})
    loaded, info = read_checkpoint(directory)
    assert sorted(loaded) == sorted(state)
    for name, value in state.items():
        np.testing.assert_array_equal(loaded[name], value)
    assert info == {'iteration': 3, 'stage': 'prior'}
    with open(os.path.join(directory, 'manifest.txt'), encoding='utf-8') as infile:
        first = infile.readline().split(', ')
    assert first[0] == 'text.table'
    assert first[1] == '5x3'


def test_checkpoint_detects_tampering(tmp_path):
    directory = write_checkpoint(str(tmp_path / 'ckpt'), {'a': np.ones((2, 2), dtype=np.float32)})
    write_tensor(os.path.join(directory, 'a.ftnsr'), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        read_checkpoint(directory)
    with pytest.raises(FileNotFoundError):
        read_checkpoint(str(tmp_path / 'missing'))


def test_manifest_window_and_errors(tmp_path):
    path = str(tmp_path / 'manifest.txt')
    entries = [ManifestEntry(index, f'hq/{index}.ftnsr', f'lq/{index}.ftnsr',
                             f'captions/{index}.txt', 100 + index, 'II') for index in range(5)]
    write_manifest(path, entries)
    assert read_manifest(path) == entries
    assert [entry.index for entry in read_manifest(path, 1, 2)] == [1, 2]
    assert [entry.index for entry in read_manifest(path, 3)] == [3, 4]
    with open(path, 'a', encoding='utf-8') as outfile:
        outfile.write('5, hq/5.ftnsr, lq/5.ftnsr\n')
    with pytest.raises(ValueError) as info:
        read_manifest(path)
    assert ':6: expected 6 fields' in str(info.value)


@pytest.mark.parametrize('index, skip, take, expected', [
    (0, 0, -1, True),
    (4, 5, -1, False),
    (5, 5, -1, True),
    (5, 5, 1, True),
    (6, 5, 1, False),
    (0, 0, 0, False),
])
def test_use_item(index, skip, take, expected):
    assert use_item(index, skip, take) is expected


def test_ppm_round_trip(tmp_path, rng):
    image = rng.uniform(-1, 1, (3, 5, 7)).astype(np.float32)
    path = str(tmp_path / 'img.ppm')
    write_ppm(path, image)
    with open(path, 'rb') as infile:
        assert infile.read(2) == b'P6'
    loaded = read_ppm(path)
    assert loaded.shape == (3, 5, 7)
    np.testing.assert_allclose(loaded, image, atol=1.0 / 127.5)


def test_ppm_clamps_out_of_range():
    pixels = to_uint8(np.array([-3.0, 0.0, 3.0]).reshape(3, 1, 1))
    assert pixels.shape == (1, 1, 3)
    assert pixels.reshape(-1).tolist() == [0, 128, 255]
    with pytest.raises(ValueError):
        to_uint8(np.zeros((2, 4, 4)))


def test_heatmap_is_gray(tmp_path):
    path = str(tmp_path / 'map.ppm')
    write_heatmap(path, np.array([[0.0, 0.5], [1.0, 2.0]]))
    loaded = read_ppm(path)
    np.testing.assert_array_equal(loaded[0], loaded[1])
    np.testing.assert_array_equal(loaded[1], loaded[2])
    assert loaded[0, 1, 1] == 1.0


def test_text_report(tmp_path):
    path = str(tmp_path / 'eval.txt')
    text_engine.write_report(path, [make_report()])
    with open(path, encoding='utf-8') as infile:
        lines = infile.read().splitlines()
    assert lines == ['0, 21.5, 0.5', '1, 23.25, 0.75', 'mean, 22.375, 0.625']
    items, means = text_engine.read_report(path)
    assert items == [(0, 21.5, 0.5), (1, 23.25, 0.75)]
    assert means == (22.375, 0.625)


def test_text_report_with_several_sources(tmp_path):
    path = str(tmp_path / 'eval.txt')
    text_engine.write_report(path, [make_report(), make_report(source='lq')])
    with open(path, encoding='utf-8') as infile:
        headers = [line.strip() for line in infile if line.startswith('#')]
    assert headers == ['# restored II', '# lq II']


def test_json_report(tmp_path):
    path = str(tmp_path / 'eval.json')
    json_engine.write_report(path, [make_report()])
    reports = json_engine.read_report(path)
    assert reports[0]['level'] == 'II'
    assert reports[0]['mean']['count'] == 2
    assert reports[0]['items'][1] == {'index': 1, 'psnr_db': 23.25, 'ssim': 0.75}


def test_csv_report(tmp_path):
    path = str(tmp_path / 'eval.csv')
    csv_engine.write_report(path, [make_report(), make_report('III', 'lq')])
    with open(path, encoding='utf-8', newline='') as infile:
        rows = list(csv.DictReader(infile))
    assert len(rows) == 4
    assert rows[0] == {'level': 'II', 'source': 'restored', 'index': '0', 'psnr_db': '21.5',
                       'ssim': '0.5'}
    assert rows[3]['source'] == 'lq'


def test_markdown_report(tmp_path):
    path = str(tmp_path / 'eval.md')
    markdown_engine.write_report(path, [make_report()])
    with open(path, encoding='utf-8') as infile:
        content = infile.read()
    assert '| II | restored | 2 | 22.375 | 0.6250 |' in content
    assert '| 1 | 23.250 | 0.7500 |' in content


def test_loss_log_append(tmp_path):
    path = str(tmp_path / 'loss.log')
    write_loss_log(path, [LossRecord(0, 'joint1', 0.5, 1e-4, 2e-4)])
    write_loss_log(path, [LossRecord(0, 'joint2', 0.25, 0.0, 2e-4)], append=True)
    assert read_loss_log(path) == [(0, 'joint1', 0.5, 1e-4, 2e-4), (0, 'joint2', 0.25, 0.0, 2e-4)]
    write_loss_log(path, [])
    assert read_loss_log(path) == []
