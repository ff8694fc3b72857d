"""Binary greymap (P5) reading and writing for 8-bit images."""
from __future__ import annotations

import os
import re

import numpy as np


class PGMError(ValueError):
    pass


_HEADER = re.compile(rb"P5(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def write_pgm(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write a 2-D uint8 array as P5 with maxval 255."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise PGMError(f"{path}: expected a 2-D image, got shape {image.shape}")
    if image.dtype != np.uint8:
        raise PGMError(f"{path}: expected uint8 pixels, got {image.dtype}")
    height, width = image.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(np.ascontiguousarray(image).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write PGM {path}: {exc.strerror}") from exc


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    m = _HEADER.match(data)
    if m is None:
        raise PGMError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise PGMError(f"{path}: only maxval 255 is supported, got {maxval}")
    body = data[m.end():]
    if len(body) < width * height:
        raise PGMError(f"{path}: truncated pixel data ({len(body)} of {width * height} bytes)")
    return np.frombuffer(body, dtype=np.uint8, count=width * height).reshape(height, width).copy()


def to_bytes(values: np.ndarray) -> np.ndarray:
    """Scale intensities in [0, 1] to 0..255, rounding to nearest."""
    values = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.rint(values * 255.0).astype(np.uint8)
