# -*- coding: utf-8 -*-
import csv
from helpers.models import ItemMetric


def write_report(output_filename, reports):
    """
    Writes per-image metrics to a CSV formated file, one row per image and
    report, with the report's level and source in leading columns.

    Args:
        output_filename (str): The name of the output file.
        reports (list[MetricReport]): Reports to write, in order.
    """
    fieldnames = ['level', 'source'] + ItemMetric.fieldnames()
    with open(output_filename, 'w', newline='', encoding='utf-8') as csvfile:
        writer = csv.DictWriter(csvfile, fieldnames=fieldnames)

        writer.writeheader()
        for report in reports:
            for item in report.items:
                row = {'level': report.level, 'source': report.source}
                row.update(item.todata())
                writer.writerow(row)
