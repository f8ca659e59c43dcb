# -*- coding: utf-8 -*-
from dataclasses import dataclass
from engines.utils import use_item

MANIFEST_FIELDS = ('index', 'hq_path', 'lq_path', 'caption_path', 'seed', 'level')


@dataclass
class ManifestEntry:
    index: int
    hq_path: str
    lq_path: str
    caption_path: str
    seed: int
    level: str

    def toline(self):
        return ', '.join(str(getattr(self, name)) for name in MANIFEST_FIELDS)


def write_manifest(output_filename, entries):
    """
    Writes a dataset manifest, one ``index, hq_path, lq_path, caption_path,
    seed, level`` line per item. Paths are relative to the manifest folder.

    Args:
        output_filename (str): Manifest path.
        entries (list[ManifestEntry]): Items in index order.
    """
    with open(output_filename, 'w', encoding='utf-8', newline='\n') as outfile:
        for entry in entries:
            outfile.write(entry.toline() + '\n')


def read_manifest(input_filename, input_skip=0, input_take=-1):
    """
    Reads manifest entries, keeping only the skip/take window.

    Raises:
        ValueError: On a line without exactly six fields.
    """
    entries = []
    with open(input_filename, encoding='utf-8') as infile:
        current_index = 0
        for line_number, line in enumerate(infile, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [part.strip() for part in line.split(',')]
            if len(parts) != len(MANIFEST_FIELDS):
                raise ValueError(
                    f'{input_filename}:{line_number}: expected {len(MANIFEST_FIELDS)} fields, '
                    f'got {len(parts)}')
            if use_item(current_index, input_skip, input_take):
                entries.append(ManifestEntry(
                    index=int(parts[0]),
                    hq_path=parts[1],
                    lq_path=parts[2],
                    caption_path=parts[3],
                    seed=int(parts[4]),
                    level=parts[5]))
            current_index += 1
    return entries
