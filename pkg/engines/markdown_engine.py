# -*- coding: utf-8 -*-


def write_report(output_filename, reports):
    """
    Writes a markdown summary: one table row of means per report followed by
    a per-image table for each report.

    Args:
        output_filename (str): The name of the output file.
        reports (list[MetricReport]): Reports to write, in order.
    """
    lines = ['# Evaluation', '',
             '| Level | Source | Images | PSNR (dB) | SSIM |',
             '|---|---|---|---|---|']
    for report in reports:
        lines.append(f'| {report.level} | {report.source} | {len(report.items)} | '
                     f'{report.mean_psnr:.3f} | {report.mean_ssim:.4f} |')

    for report in reports:
        lines.extend(['', f'## {report.source} ({report.level})', '',
                      '| Index | PSNR (dB) | SSIM |', '|---|---|---|'])
        for item in report.items:
            lines.append(f'| {item.index} | {item.psnr_db:.3f} | {item.ssim:.4f} |')

    with open(output_filename, 'w', encoding='utf-8', newline='\n') as outfile:
        outfile.write('\n'.join(lines) + '\n')
