# -*- coding: utf-8 -*-


def use_item(current_index, skip, take):
    """
    True when the record at ``current_index`` falls inside the
    ``--input-skip`` / ``--input-take`` window; a negative ``take`` keeps
    every record after ``skip``.
    """
    if current_index < max(skip, 0):
        return False
    return take < 0 or current_index < max(skip, 0) + take
