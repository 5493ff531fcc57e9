"""Bit-packed membership matrices ("EVFM" files).

Layout: magic ``b"EVFM"``, u32 event count, u32 grid-point count (little
endian), then one row per event of ``ceil(n / 64)`` little-endian u64 words;
grid point ``j`` is bit ``j % 64`` of word ``j // 64``.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"EVFM"


def pack_membership(membership: np.ndarray) -> bytes:
    m = np.asarray(membership, dtype=bool)
    n_events, n_points = m.shape
    words = (n_points + 63) // 64
    padded = np.zeros((n_events, words * 64), dtype=bool)
    padded[:, :n_points] = m
    body = np.packbits(padded, axis=1, bitorder="little")  # byte order matches LE u64 words
    return MAGIC + struct.pack("<II", n_events, n_points) + body.tobytes()


def unpack_membership(data: bytes) -> np.ndarray:
    if data[:4] != MAGIC:
        raise ValueError("not an EVFM file")
    n_events, n_points = struct.unpack("<II", data[4:12])
    words = (n_points + 63) // 64
    body = np.frombuffer(data, dtype=np.uint8, offset=12)
    if body.size != n_events * words * 8:
        raise ValueError("EVFM body has the wrong length")
    bits = np.unpackbits(body.reshape(n_events, words * 8), axis=1, bitorder="little")
    return bits[:, :n_points].astype(bool)


def write_membership(path, membership: np.ndarray) -> None:
    atomic_write_bytes(Path(path), pack_membership(membership))


def read_membership(path) -> np.ndarray:
    return unpack_membership(Path(path).read_bytes())


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
