# -*- coding: utf-8 -*-
import json


def write_report(output_filename, reports):
    """
    Writes metric reports to a JSON formated file.

    Args:
        output_filename (str): The name of the output file.
        reports (list[MetricReport]): Reports to write, in order.

    Returns:
        None
    """
    with open(output_filename, 'w', encoding='utf-8', newline='\n') as outfile:
        # json require us to have an object as root element
        container_object = {
            "reports": [report.todata() for report in reports]
        }
        json.dump(container_object, outfile, indent=4)


def read_report(input_filename):
    """
    Reads the ``reports`` list back from a JSON report file.

    Returns:
        list[dict]: One dict per report as written by ``write_report``.
    """
    with open(input_filename, encoding='utf-8') as json_input_file:
        data = json.load(json_input_file)
    return data["reports"]
