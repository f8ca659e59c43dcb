# -*- coding: utf-8 -*-

import hashlib


def create_sha256_hash(data):
    """
    Creates a SHA-256 hash of the given data and returns it as a hex string.

    Used as the content checksum of checkpoint entries.

    Parameters:
    data (bytes): The data to be hashed.

    Returns:
    str: The hex encoded SHA-256 digest of the input data.
    """
    return hashlib.sha256(data).hexdigest()


def name_to_int(name):
    """
    Maps a stream name to a stable 64 bit integer (first 8 digest bytes).
    """
    digest = hashlib.sha256(name.encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'little')
