"""Labeled-hash seed splitting.

A child seed is the first 8 bytes (big endian) of
``sha256("<master>/<label1>/<label2>/...")``, masked to 63 bits. Labels are
rendered with ``str``; the same master and labels always give the same child,
independent of call order or worker count.
"""
import hashlib

import numpy as np


def derive_seed(master: int, *labels) -> int:
    text = "/".join([str(int(master))] + [str(x) for x in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & ((1 << 63) - 1)


def rng_for(master: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *labels))
