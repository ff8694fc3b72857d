"""Bags, patches and the pixel geometry shared by every sampler."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class BoundsError(ValueError):
    """A patch coordinate falls outside its bag."""


class NumericError(ArithmeticError):
    """NaN or infinite values where finite numbers are required."""


@dataclass(frozen=True)
class PatchCoord:
    row: int
    col: int
    size: int

    def center(self) -> tuple[float, float]:
        half = self.size / 2.0
        return self.row + half, self.col + half


@dataclass(frozen=True, eq=False)
class ImageBag:
    """One grayscale image with a single binary label.

    ``truth_mask`` marks discriminative pixels and only exists for synthetic
    data; training code never reads it.
    """

    id: str
    pixels: np.ndarray
    label: int
    truth_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=np.float64)
        if pixels.ndim != 2:
            raise ValueError(f"bag {self.id!r}: pixels must be 2-D, got shape {pixels.shape}")
        if pixels.size and (pixels.min() < 0.0 or pixels.max() > 1.0):
            raise ValueError(f"bag {self.id!r}: intensities must lie in [0, 1]")
        if self.label not in (0, 1):
            raise ValueError(f"bag {self.id!r}: label must be 0 or 1, got {self.label!r}")
        pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "label", int(self.label))
        if self.truth_mask is not None:
            mask = np.array(self.truth_mask, dtype=bool)
            if mask.shape != pixels.shape:
                raise ValueError(f"bag {self.id!r}: truth_mask shape {mask.shape} != {pixels.shape}")
            mask.flags.writeable = False
            object.__setattr__(self, "truth_mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class Patch:
    coord: PatchCoord
    pixels: np.ndarray


def check_coord(coord: PatchCoord, height: int, width: int) -> None:
    if coord.size < 1:
        raise BoundsError(f"patch size must be positive, got {coord.size}")
    if not (0 <= coord.row <= height - coord.size):
        raise BoundsError(
            f"row {coord.row} out of bounds: row+size={coord.row + coord.size} > {height} or row < 0"
        )
    if not (0 <= coord.col <= width - coord.size):
        raise BoundsError(
            f"col {coord.col} out of bounds: col+size={coord.col + coord.size} > {width} or col < 0"
        )


def extract_patch(bag: ImageBag, coord: PatchCoord) -> Patch:
    check_coord(coord, bag.height, bag.width)
    window = bag.pixels[coord.row:coord.row + coord.size, coord.col:coord.col + coord.size].copy()
    return Patch(coord, window)


def extract_patches(pixels: np.ndarray, coords: Sequence[PatchCoord]) -> np.ndarray:
    """Stack the windows at ``coords`` into an array of shape (m, size, size).

    All coords must share one size. Bounds are checked.
    """
    if len(coords) == 0:
        return np.empty((0, 0, 0))
    size = coords[0].size
    height, width = pixels.shape
    out = np.empty((len(coords), size, size), dtype=np.float64)
    for i, c in enumerate(coords):
        if c.size != size:
            raise ValueError(f"mixed patch sizes {size} and {c.size}")
        check_coord(c, height, width)
        out[i] = pixels[c.row:c.row + size, c.col:c.col + size]
    return out


def center_bounds(size: int, height: int, width: int) -> tuple[float, float, float, float]:
    """Range of real centers whose patch lies fully inside the image."""
    half = size / 2.0
    return half, height - half, half, width - half


def _clamp_top_left(center: float, size: int, extent: int) -> int:
    if math.isnan(center):
        raise ValueError("patch center is NaN")
    if math.isinf(center):
        return 0 if center < 0 else extent - size
    top = math.floor(center - size / 2.0)
    return int(min(max(top, 0), extent - size))


def clamp_center(center_row: float, center_col: float, size: int, height: int, width: int) -> PatchCoord:
    """Top-left coord of the size x size patch centred nearest to a real point."""
    if height < size or width < size:
        raise BoundsError(f"image {height}x{width} smaller than patch size {size}")
    return PatchCoord(
        _clamp_top_left(center_row, size, height),
        _clamp_top_left(center_col, size, width),
        size,
    )
