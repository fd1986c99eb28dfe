"""Minimal IDX writer used only by the tests."""
import gzip
import struct

import numpy as np


def write_idx_images(path, images, magic=0x00000803):
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    payload = struct.pack(">IIII", magic, count, rows, cols) + images.tobytes()
    _write(path, payload)


def write_idx_labels(path, labels, magic=0x00000801):
    labels = np.asarray(labels, dtype=np.uint8)
    _write(path, struct.pack(">II", magic, labels.size) + labels.tobytes())


def _write(path, payload):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(payload)
