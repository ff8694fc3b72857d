"""Synthetic MIL datasets: grayscale canvases sprinkled with digit glyphs.

A bag is positive when it contains at least one glyph of the target class.
Glyphs come either from MNIST-style IDX files or from a procedural stroke
renderer that needs no external data.
"""
from __future__ import annotations

import csv
import math
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .bag_model import ImageBag
from .pgm import read_pgm, to_bytes, write_pgm

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

LAYOUTS = ("sparse", "clustered")


class IDXFormatError(ValueError):
    """Malformed IDX file; ``offset`` is the byte position of the problem."""

    def __init__(self, path, offset: int, message: str):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path}: byte {offset}: {message}")


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class GlyphSet:
    glyphs: np.ndarray  # (count, g, g) float64 in [0, 1]
    classes: np.ndarray  # (count,) int
    source: str

    def __post_init__(self):
        glyphs = np.asarray(self.glyphs, dtype=np.float64)
        classes = np.asarray(self.classes, dtype=np.int64)
        if glyphs.ndim != 3 or glyphs.shape[1] != glyphs.shape[2]:
            raise ValueError(f"glyphs must have shape (count, g, g), got {glyphs.shape}")
        if len(classes) != len(glyphs):
            raise ValueError(f"{len(glyphs)} glyphs but {len(classes)} class labels")
        if glyphs.size and (glyphs.min() < 0 or glyphs.max() > 1):
            raise ValueError("glyph intensities must lie in [0, 1]")
        if classes.size and (classes.min() < 0 or classes.max() > 9):
            raise ValueError("glyph classes must lie in 0..9")
        object.__setattr__(self, "glyphs", glyphs)
        object.__setattr__(self, "classes", classes)

    @property
    def glyph_size(self) -> int:
        return self.glyphs.shape[1]

    def __len__(self) -> int:
        return len(self.glyphs)


@dataclass(frozen=True)
class SynthConfig:
    bag_size: int = 256
    glyph_count_per_bag: int = 12
    target_class: int = 9
    positive_target_count_min: int = 1
    layout: str = "sparse"
    cluster_radius: float = 32.0
    seed: int = 0
    n_train: int = 200
    n_test: int = 80
    glyph_size: int = 28  # tile size for procedural glyphs; IDX glyphs are always 28

    def validate(self, glyph_size: Optional[int] = None) -> None:
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        if self.positive_target_count_min < 1:
            raise ValueError("positive_target_count_min must be >= 1")
        if self.layout == "clustered" and not self.cluster_radius > 0:
            raise ValueError("cluster_radius must be > 0 for the clustered layout")
        if glyph_size is not None and self.bag_size < glyph_size:
            raise ValueError(f"bag_size {self.bag_size} smaller than glyph size {glyph_size}")
        if self.glyph_count_per_bag < 3 * self.positive_target_count_min:
            raise ValueError("glyph_count_per_bag must cover 3 * positive_target_count_min targets")
        if not 0 <= self.target_class <= 9:
            raise ValueError("target_class must lie in 0..9")
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("split sizes must be non-negative")


def desk_config(layout: str = "sparse", seed: int = 0, **overrides) -> SynthConfig:
    # 256 px canvases, 12 glyphs, 200 train / 80 test bags. Positive bags hold
    # 4 to 12 targets: with a single target the small perceptron stays at chance
    # under every sampling strategy.
    cfg = SynthConfig(layout=layout, seed=seed, positive_target_count_min=4)
    return replace(cfg, **overrides)


def paper_config(layout: str = "sparse", seed: int = 0, **overrides) -> SynthConfig:
    # 1024 px canvases of 28 px digits, 1000 train / 400 test bags
    cfg = SynthConfig(
        bag_size=1024,
        glyph_count_per_bag=150,
        layout=layout,
        cluster_radius=40.0,
        seed=seed,
        n_train=1000,
        n_test=400,
    )
    return replace(cfg, **overrides)


# -- IDX ------------------------------------------------------------------

def _read_idx(path, expected_magic: int) -> tuple[np.ndarray, int]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4:
        raise IDXFormatError(path, len(data), "file too short for magic number")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise IDXFormatError(path, 0, f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise IDXFormatError(path, len(data), f"truncated header, need {ndim} dimension sizes")
    dims = struct.unpack(f">{ndim}I", data[4:header_end])
    expected = int(np.prod(dims))
    if len(data) - header_end < expected:
        raise IDXFormatError(
            path, len(data), f"truncated data: {len(data) - header_end} of {expected} bytes"
        )
    arr = np.frombuffer(data, dtype=np.uint8, count=expected, offset=header_end).reshape(dims)
    return arr, header_end


def load_idx(images_path, labels_path) -> GlyphSet:
    images, _ = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels, _ = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        # item counts live at byte 4 of both headers
        raise IDXFormatError(
            labels_path, 4, f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise IDXFormatError(labels_path, 8 + bad, f"label {labels[bad]} outside 0..9")
    return GlyphSet(images.astype(np.float64) / 255.0, labels.astype(np.int64), "idx")


# -- procedural glyphs ----------------------------------------------------

def _arc(cx, cy, rx, ry, a0, a1, n=16):
    t = np.linspace(np.radians(a0), np.radians(a1), n)
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _line(*points):
    return np.array(points, dtype=np.float64)


# Strokes in a unit box, x to the right, y downwards. Angles in degrees
# follow the same orientation (90 points down).
_DIGIT_STROKES = {
    0: [_arc(0.5, 0.5, 0.3, 0.45, 0, 360, 32)],
    1: [_line((0.5, 0.05), (0.5, 0.95)), _line((0.32, 0.22), (0.5, 0.05))],
    2: [
        np.vstack([_arc(0.5, 0.3, 0.28, 0.25, 190, 360, 14), _line((0.78, 0.3), (0.2, 0.95), (0.82, 0.95))]),
    ],
    3: [_arc(0.47, 0.28, 0.28, 0.23, 200, 450, 18), _arc(0.47, 0.72, 0.3, 0.23, 270, 520, 18)],
    4: [_line((0.25, 0.05), (0.2, 0.55), (0.82, 0.55)), _line((0.66, 0.08), (0.66, 0.95))],
    5: [
        np.vstack([_line((0.8, 0.05), (0.27, 0.05), (0.24, 0.45)), _arc(0.48, 0.67, 0.3, 0.27, 230, 500, 18)]),
    ],
    6: [
        np.vstack([_line((0.7, 0.05)), _arc(0.72, 0.6, 0.5, 0.55, 240, 180, 8)]),
        _arc(0.5, 0.7, 0.26, 0.24, 0, 360, 28),
    ],
    7: [_line((0.18, 0.05), (0.82, 0.05), (0.4, 0.95))],
    8: [_arc(0.5, 0.27, 0.22, 0.22, 0, 360, 24), _arc(0.5, 0.72, 0.27, 0.23, 0, 360, 24)],
    9: [_arc(0.5, 0.3, 0.25, 0.24, 0, 360, 28), _line((0.75, 0.3), (0.72, 0.95))],
}


def _segments(strokes) -> np.ndarray:
    segs = [np.concatenate([s[:-1], s[1:]], axis=1) for s in strokes if len(s) > 1]
    return np.concatenate(segs, axis=0)  # (k, 4): x0 y0 x1 y1


def _render(segments: np.ndarray, size: int, thickness: float) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    p = np.stack([xs.ravel(), ys.ravel()], axis=1)[:, None, :]
    a = segments[None, :, :2]
    b = segments[None, :, 2:]
    ab = b - a
    denom = np.maximum((ab * ab).sum(-1), 1e-12)
    t = np.clip(((p - a) * ab).sum(-1) / denom, 0.0, 1.0)
    d = np.linalg.norm(p - (a + t[..., None] * ab), axis=-1).min(axis=1)
    # one-pixel linear ramp at the stroke edge
    ink = np.clip(thickness + 0.5 - d, 0.0, 1.0)
    return ink.reshape(size, size)


def procedural_glyphs(seed: int = 0, variants_per_class: int = 24, size: int = 28) -> GlyphSet:
    """Render jittered stroke digits 0-9 into ``size`` x ``size`` tiles.

    Each variant applies a random rotation, shear, anisotropic scale,
    sub-pixel shift and stroke width to the class template, so tiles of
    one class differ the way handwritten samples do.
    """
    rng = np.random.default_rng([seed, 0x6C79])
    box = size * 20.0 / 28.0
    margin = (size - box) / 2.0
    tiles, classes = [], []
    for digit in range(10):
        base = _segments(_DIGIT_STROKES[digit])
        for _ in range(variants_per_class):
            angle = np.radians(rng.uniform(-12, 12))
            shear = rng.uniform(-0.15, 0.15)
            sx, sy = rng.uniform(0.85, 1.05, size=2)
            rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
            mat = rot @ np.array([[1.0, shear], [0.0, 1.0]]) @ np.diag([sx, sy])
            shift = rng.uniform(-1.0, 1.0, size=2)
            pts = base.reshape(-1, 2) - 0.5
            pts = pts @ mat.T * box + size / 2.0 + shift
            thickness = rng.uniform(0.9, 1.6)
            tiles.append(_render(pts.reshape(-1, 4), size, thickness))
            classes.append(digit)
    return GlyphSet(np.stack(tiles), np.array(classes), "procedural")


# -- bag generation -------------------------------------------------------

def _overlaps(r: int, c: int, placed: list[tuple[int, int]], g: int) -> bool:
    return any(abs(r - pr) < g and abs(c - pc) < g for pr, pc in placed)


def _place_uniform(rng, placed, g, bag_size, tries) -> Optional[tuple[int, int]]:
    for _ in range(tries):
        r, c = (int(v) for v in rng.integers(0, bag_size - g + 1, size=2))
        if not _overlaps(r, c, placed, g):
            return r, c
    return None


def _place_in_cluster(rng, center, radius, placed, g, bag_size) -> Optional[tuple[int, int]]:
    # enumerate every legal top-left whose glyph center lies in the disc
    half = g / 2.0
    r_lo = max(0, math.floor(center[0] - half - radius))
    r_hi = min(bag_size - g, math.ceil(center[0] - half + radius))
    c_lo = max(0, math.floor(center[1] - half - radius))
    c_hi = min(bag_size - g, math.ceil(center[1] - half + radius))
    if r_hi < r_lo or c_hi < c_lo:
        return None
    rr, cc = np.mgrid[r_lo:r_hi + 1, c_lo:c_hi + 1]
    ok = np.hypot(rr + half - center[0], cc + half - center[1]) <= radius
    for pr, pc in placed:
        ok &= (np.abs(rr - pr) >= g) | (np.abs(cc - pc) >= g)
    candidates = np.flatnonzero(ok)
    if len(candidates) == 0:
        return None
    j = candidates[rng.integers(len(candidates))]
    return int(rr.flat[j]), int(cc.flat[j])


def _layout_positions(cfg: SynthConfig, n_targets: int, g: int, rng, tries: int = 200):
    placed: list[tuple[int, int]] = []
    center = None
    if n_targets and cfg.layout == "clustered":
        # keep the whole disc inside the legal center range when the canvas allows
        lo = min(g / 2.0 + cfg.cluster_radius, cfg.bag_size / 2.0)
        center = tuple(float(v) for v in rng.uniform(lo, cfg.bag_size - lo, size=2))
        for _ in range(n_targets):
            pos = _place_in_cluster(rng, center, cfg.cluster_radius, placed, g, cfg.bag_size)
            if pos is None:
                return None
            placed.append(pos)
    for _ in range(cfg.glyph_count_per_bag - len(placed)):
        pos = _place_uniform(rng, placed, g, cfg.bag_size, tries)
        if pos is None:
            return None
        placed.append(pos)
    return placed, center


class GlyphLayout(NamedTuple):
    positions: list  # top-left (row, col) per glyph, targets first
    n_targets: int
    cluster_center: Optional[tuple[float, float]] = None


def layout_glyphs(cfg: SynthConfig, glyph_size: int, label: int, rng,
                  max_restarts: int = 20) -> GlyphLayout:
    """Draw non-overlapping top-left positions for every glyph of one bag.

    A cluster too small for the drawn number of targets gets one target
    fewer after ``max_restarts`` failed attempts, never going below
    ``positive_target_count_min``.
    """
    k = cfg.positive_target_count_min
    n_targets = int(rng.integers(k, 3 * k + 1)) if label == 1 else 0
    while True:
        for _ in range(max_restarts):
            drawn = _layout_positions(cfg, n_targets, glyph_size, rng)
            if drawn is not None:
                return GlyphLayout(drawn[0], n_targets, drawn[1])
        if cfg.layout != "clustered" or n_targets <= k:
            break
        n_targets -= 1
    raise PlacementError(
        f"could not place {cfg.glyph_count_per_bag} non-overlapping {glyph_size}px glyphs on a "
        f"{cfg.bag_size}px canvas; try a smaller glyph_count_per_bag"
    )


def generate_bag(cfg: SynthConfig, glyphs: GlyphSet, label: int, rng, bag_id: str = "bag") -> ImageBag:
    g = glyphs.glyph_size
    cfg.validate(g)
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    is_target = glyphs.classes == cfg.target_class
    target_idx = np.flatnonzero(is_target)
    other_idx = np.flatnonzero(~is_target)
    if len(target_idx) == 0 or len(other_idx) == 0:
        raise ValueError("glyph set needs both target and non-target classes")

    positions, n_targets, _ = layout_glyphs(cfg, g, label, rng)
    pixels = np.zeros((cfg.bag_size, cfg.bag_size))
    mask = np.zeros((cfg.bag_size, cfg.bag_size), dtype=bool)
    for i, (r, c) in enumerate(positions):
        if i < n_targets:
            tile = glyphs.glyphs[rng.choice(target_idx)]
            mask[r:r + g, c:c + g] = True
        else:
            tile = glyphs.glyphs[rng.choice(other_idx)]
        pixels[r:r + g, c:c + g] = tile
    return ImageBag(bag_id, pixels, label, mask)


def _split_labels(n: int, rng) -> np.ndarray:
    labels = np.arange(n) % 2
    return rng.permutation(labels)


def generate_split(cfg: SynthConfig, glyphs: GlyphSet, split: str) -> list[ImageBag]:
    split_key = {"train": 0, "test": 1}[split]
    n = cfg.n_train if split == "train" else cfg.n_test
    labels = _split_labels(n, np.random.default_rng([cfg.seed, split_key, 0xBA6]))
    bags = []
    for i, label in enumerate(labels):
        # one stream per (seed, split, bag) so bags can be built independently
        rng = np.random.default_rng([cfg.seed, split_key, i])
        bags.append(generate_bag(cfg, glyphs, int(label), rng, f"{split}-{i:05d}"))
    return bags


def generate_dataset(cfg: SynthConfig, glyphs: GlyphSet) -> tuple[list[ImageBag], list[ImageBag]]:
    cfg.validate(glyphs.glyph_size)
    return generate_split(cfg, glyphs, "train"), generate_split(cfg, glyphs, "test")


# -- on-disk datasets -----------------------------------------------------

MANIFEST = "manifest.csv"


def save_dataset(outdir, train: list[ImageBag], test: list[ImageBag]) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / MANIFEST, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "label", "split"])
        for split, bags in (("train", train), ("test", test)):
            for bag in bags:
                write_pgm(outdir / f"{bag.id}.pgm", to_bytes(bag.pixels))
                if bag.truth_mask is not None:
                    write_pgm(outdir / f"{bag.id}.mask.pgm", bag.truth_mask.astype(np.uint8) * 255)
                w.writerow([bag.id, bag.label, split])
    return outdir


def load_dataset(indir) -> tuple[list[ImageBag], list[ImageBag]]:
    indir = Path(indir)
    splits: dict[str, list[ImageBag]] = {"train": [], "test": []}
    with open(indir / MANIFEST, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["id", "label", "split"]:
            raise ValueError(f"{indir / MANIFEST}: header must be id,label,split")
        for row in reader:
            pixels = read_pgm(indir / f"{row['id']}.pgm") / 255.0
            mask_path = indir / f"{row['id']}.mask.pgm"
            mask = read_pgm(mask_path) > 0 if os.path.exists(mask_path) else None
            if row["split"] not in splits:
                raise ValueError(f"{indir / MANIFEST}: unknown split {row['split']!r}")
            splits[row["split"]].append(ImageBag(row["id"], pixels, int(row["label"]), mask))
    return splits["train"], splits["test"]
