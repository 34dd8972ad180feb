"""Binary 8-bit PGM (P5) reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise FormatError("PGM images must be 2-D uint8 arrays")
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


def _tokens(data: bytes, count: int):
    """The first ``count`` header tokens (comments skipped) and the offset after them."""
    out, pos = [], 2
    while len(out) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        out.append(data[start:pos])
    return out, pos + 1


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    try:
        (w, h, maxval), offset = _tokens(data, 3)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported")
    body = data[offset : offset + w * h]
    if len(body) != w * h:
        raise FormatError(f"{path}: truncated PGM body")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()
