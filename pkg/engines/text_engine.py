# -*- coding: utf-8 -*-


def write_report(output_filename, reports):
    """
    Writes the line-delimited report format: ``index, psnr_db, ssim`` per
    image and a trailing ``mean, psnr_db, ssim`` line. Several reports are
    separated by ``# <source> <level>`` header lines.

    Floats are written with repr so equal reports give identical files.
    """
    lines = []
    for report in reports:
        if len(reports) > 1:
            lines.append(f'# {report.source} {report.level}')
        for item in report.items:
            lines.append(f'{item.index}, {item.psnr_db!r}, {item.ssim!r}')
        lines.append(f'mean, {report.mean_psnr!r}, {report.mean_ssim!r}')
    with open(output_filename, 'w', encoding='utf-8', newline='\n') as outfile:
        outfile.write('\n'.join(lines) + '\n')


def read_report(input_filename):
    """
    Parses a single-report text file.

    Returns:
        tuple: (list of (index, psnr_db, ssim), (mean_psnr, mean_ssim))
    """
    items = []
    means = None
    with open(input_filename, encoding='utf-8') as infile:
        for line in infile:
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            first, psnr_db, ssim = [part.strip() for part in line.split(',')]
            if first == 'mean':
                means = (float(psnr_db), float(ssim))
            else:
                items.append((int(first), float(psnr_db), float(ssim)))
    return items, means
