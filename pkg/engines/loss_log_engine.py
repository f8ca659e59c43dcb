# -*- coding: utf-8 -*-


def write_loss_log(output_filename, records, append=False):
    """
    Writes ``iter, stage, loss, lr_encoder, lr_other`` lines.

    Args:
        output_filename (str): Log path.
        records (list[LossRecord]): Per-iteration records.
        append (bool): Append to an existing log (multi-pass stages).
    """
    with open(output_filename, 'a' if append else 'w', encoding='utf-8',
              newline='\n') as outfile:
        for record in records:
            outfile.write(record.toline() + '\n')


def read_loss_log(input_filename):
    """Returns ``(iteration, stage, loss, lr_encoder, lr_other)`` tuples."""
    entries = []
    with open(input_filename, encoding='utf-8') as infile:
        for line in infile:
            line = line.strip()
            if not line:
                continue
            iteration, stage, loss, lr_encoder, lr_other = [part.strip() for part in line.split(',')]
            entries.append((int(iteration), stage, float(loss), float(lr_encoder), float(lr_other)))
    return entries
