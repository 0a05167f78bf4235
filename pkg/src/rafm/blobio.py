"""Flat little-endian float32 blobs behind a small JSON header.

Layout: ``uint32 header_len | header_len bytes of UTF-8 JSON | float32 data``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np


def write_blob(path: str | Path, header: dict, data: np.ndarray) -> None:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = np.ascontiguousarray(data, dtype="<f4").tobytes()
    Path(path).write_bytes(struct.pack("<I", len(head)) + head + body)


def read_blob(path: str | Path) -> tuple[dict, np.ndarray]:
    raw = Path(path).read_bytes()
    (n,) = struct.unpack_from("<I", raw, 0)
    header = json.loads(raw[4:4 + n].decode("utf-8"))
    data = np.frombuffer(raw, dtype="<f4", offset=4 + n).copy()
    return header, data


def write_samples(path: str | Path, x: np.ndarray, **meta) -> None:
    x = np.atleast_2d(x)
    write_blob(path, {"n": int(x.shape[0]), "d": int(x.shape[1]), **meta}, x)


def read_samples(path: str | Path) -> tuple[dict, np.ndarray]:
    header, data = read_blob(path)
    return header, data.reshape(header["n"], header["d"])
