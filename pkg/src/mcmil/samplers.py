"""Patch-position samplers: regular grid, uniform, and the particle sampler.

The particle sampler keeps ``n`` real-valued points per bag. Each step
scores the patches under unscored points, rescales the scores to [0, 1],
moves the ``l`` weakest points on top of strong ones and jitters the moved
points with Gaussian noise.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .bag_model import BoundsError, ImageBag, NumericError, PatchCoord, center_bounds, clamp_center

# scorer(bag, coords) -> array of patch scores, one per coord
Scorer = Callable[[ImageBag, Sequence[PatchCoord]], np.ndarray]

RESAMPLE_MODES = ("deterministic", "stochastic")


class SamplerConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridConfig:
    patch_size: int
    overlap: float = 0.0

    @property
    def stride(self) -> int:
        if not 0.0 <= self.overlap < 1.0:
            raise SamplerConfigError(f"overlap must lie in [0, 1), got {self.overlap}")
        return max(1, int(math.floor(self.patch_size * (1.0 - self.overlap))))


@dataclass(frozen=True)
class MCConfig:
    n: int
    l: Optional[int] = None  # noqa: E741  (defaults to n // 4)
    k: int = 1
    sigma: float = 16.0
    resample_mode: str = "deterministic"
    seed: int = 0

    def __post_init__(self):
        if self.l is None:
            object.__setattr__(self, "l", max(1, self.n // 4))

    def validate(self, resampling: bool = True) -> None:
        if self.n < 1:
            raise SamplerConfigError(f"n must be >= 1, got {self.n}")
        if resampling and not 1 <= self.l < self.n:
            raise SamplerConfigError(f"l must satisfy 1 <= l < n, got l={self.l}, n={self.n}")
        if self.k < 1:
            raise SamplerConfigError(f"k must be >= 1, got {self.k}")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise SamplerConfigError(f"sigma must be finite and >= 0, got {self.sigma}")
        if self.resample_mode not in RESAMPLE_MODES:
            raise SamplerConfigError(f"resample_mode must be one of {RESAMPLE_MODES}")


# -- grid and uniform -----------------------------------------------------

def grid_positions(height: int, width: int, grid: GridConfig) -> list[PatchCoord]:
    size = grid.patch_size
    if height < size or width < size:
        raise BoundsError(f"image {height}x{width} smaller than patch size {size}")
    stride = grid.stride
    rows = range(0, height - size + 1, stride)
    cols = range(0, width - size + 1, stride)
    return [PatchCoord(r, c, size) for r in rows for c in cols]


def uniform_positions(height: int, width: int, count: int, rng: np.random.Generator,
                      size: int) -> list[PatchCoord]:
    if height < size or width < size:
        raise BoundsError(f"image {height}x{width} smaller than patch size {size}")
    rows = rng.integers(0, height - size + 1, size=count)
    cols = rng.integers(0, width - size + 1, size=count)
    return [PatchCoord(int(r), int(c), size) for r, c in zip(rows, cols)]


# -- particles ------------------------------------------------------------

class Particle(NamedTuple):
    row: float
    col: float
    raw_score: float
    norm_score: float


@dataclass(frozen=True, eq=False)
class ParticleSet:
    """Particle state for one bag. NaN scores mean "not evaluated yet".

    ``replaced`` flags the particles moved by the latest resample; only those
    are displaced.
    """

    rows: np.ndarray
    cols: np.ndarray
    raw: np.ndarray
    norm: np.ndarray
    replaced: np.ndarray
    bag_id: str = ""
    iteration: int = 0
    size: int = 0
    height: int = 0
    width: int = 0

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def particles(self) -> list[Particle]:
        return [Particle(*map(float, p)) for p in zip(self.rows, self.cols, self.raw, self.norm)]

    def coords(self) -> list[PatchCoord]:
        return [clamp_center(r, c, self.size, self.height, self.width)
                for r, c in zip(self.rows, self.cols)]

    def invalidate(self) -> "ParticleSet":
        """Forget every cached score, e.g. after the network weights changed."""
        nan = np.full(len(self), np.nan)
        return replace(self, raw=nan, norm=nan.copy(), replaced=np.zeros(len(self), dtype=bool))


def mc_init(height: int, width: int, cfg: MCConfig, rng: np.random.Generator, size: int,
            bag_id: str = "") -> ParticleSet:
    cfg.validate(resampling=False)
    r0, r1, c0, c1 = center_bounds(size, height, width)
    if r1 < r0 or c1 < c0:
        raise BoundsError(f"image {height}x{width} smaller than patch size {size}")
    rows = rng.uniform(r0, r1, size=cfg.n)
    cols = rng.uniform(c0, c1, size=cfg.n)
    nan = np.full(cfg.n, np.nan)
    return ParticleSet(rows, cols, nan, nan.copy(), np.zeros(cfg.n, dtype=bool),
                       bag_id, 0, size, height, width)


def mc_normalize(scores) -> np.ndarray:
    """Min-max rescale to [0, 1]; a constant input maps to 0.5 everywhere."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("cannot normalize an empty score list")
    if not np.all(np.isfinite(s)):
        raise NumericError("scores must be finite")
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.full_like(s, 0.5)
    return (s - lo) / (hi - lo)


def _draw_without_replacement(weights: np.ndarray, count: int, rng) -> np.ndarray:
    # sequential draws; falls back to uniform once the remaining mass is zero
    remaining = np.arange(len(weights))
    w = weights.astype(np.float64).copy()
    chosen = []
    for _ in range(count):
        total = w.sum()
        if total > 0:
            j = int(rng.choice(len(remaining), p=w / total))
        else:
            j = int(rng.integers(len(remaining)))
        chosen.append(remaining[j])
        remaining = np.delete(remaining, j)
        w = np.delete(w, j)
    return np.array(chosen, dtype=np.int64)


def mc_resample(ps: ParticleSet, cfg: MCConfig, rng: np.random.Generator) -> ParticleSet:
    n, l = len(ps), cfg.l
    if l >= n:
        raise SamplerConfigError(f"l={l} must be smaller than n={n}")
    cfg.validate()
    norm = ps.norm
    if np.any(np.isnan(norm)):
        raise ValueError("every particle needs a normalized score before resampling")

    if cfg.resample_mode == "deterministic":
        victims = np.argsort(norm, kind="stable")[:l]
    else:
        victims = _draw_without_replacement(1.0 - norm, l, rng)

    survivors = np.setdiff1d(np.arange(n), victims)
    w = norm[survivors]
    p = w / w.sum() if w.sum() > 0 else None
    donors = survivors[rng.choice(len(survivors), size=l, p=p)]

    rows, cols = ps.rows.copy(), ps.cols.copy()
    raw, new_norm = ps.raw.copy(), norm.copy()
    rows[victims] = ps.rows[donors]
    cols[victims] = ps.cols[donors]
    raw[victims] = np.nan
    new_norm[victims] = np.nan
    replaced = np.zeros(n, dtype=bool)
    replaced[victims] = True
    return replace(ps, rows=rows, cols=cols, raw=raw, norm=new_norm, replaced=replaced)


def mc_displace(ps: ParticleSet, cfg: MCConfig, rng: np.random.Generator,
                height: Optional[int] = None, width: Optional[int] = None) -> ParticleSet:
    height = ps.height if height is None else height
    width = ps.width if width is None else width
    rows, cols = ps.rows.copy(), ps.cols.copy()
    moved = np.flatnonzero(ps.replaced)
    if len(moved) and cfg.sigma > 0:
        rows[moved] += rng.normal(0.0, cfg.sigma, size=len(moved))
        cols[moved] += rng.normal(0.0, cfg.sigma, size=len(moved))
    r0, r1, c0, c1 = center_bounds(ps.size, height, width)
    np.clip(rows, r0, r1, out=rows)
    np.clip(cols, c0, c1, out=cols)
    return replace(ps, rows=rows, cols=cols)


class Evaluation(NamedTuple):
    index: int
    coord: PatchCoord
    raw_score: float


def mc_step(ps: ParticleSet, scorer: Scorer, cfg: MCConfig, rng: np.random.Generator,
            bag: ImageBag) -> tuple[ParticleSet, list[Evaluation]]:
    """One evaluate / normalize / resample / displace cycle.

    Returns the new particle set and the patches scored during this cycle.
    """
    todo = np.flatnonzero(np.isnan(ps.raw))
    coords = ps.coords()
    raw = ps.raw.copy()
    evaluated: list[Evaluation] = []
    if len(todo):
        scores = np.asarray(scorer(bag, [coords[i] for i in todo]), dtype=np.float64)
        if scores.shape != (len(todo),):
            raise ValueError(f"scorer returned shape {scores.shape}, expected ({len(todo)},)")
        raw[todo] = scores
        evaluated = [Evaluation(int(i), coords[i], float(s)) for i, s in zip(todo, scores)]
    norm = mc_normalize(raw)
    ps = replace(ps, raw=raw, norm=norm)
    ps = mc_resample(ps, cfg, rng)
    ps = mc_displace(ps, cfg, rng)
    return replace(ps, iteration=ps.iteration + 1), evaluated


# -- trace export ---------------------------------------------------------

TRACE_HEADER = ["bag_id", "step", "particle_idx", "row", "col", "raw_score", "norm_score"]


def trace_rows(ps: ParticleSet, step: int) -> list[tuple]:
    return [(ps.bag_id, step, i, float(r), float(c), float(s), float(ns))
            for i, (r, c, s, ns) in enumerate(zip(ps.rows, ps.cols, ps.raw, ps.norm))]


def write_trace(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in rows:
            w.writerow([row[0], row[1], row[2]] + [repr(float(v)) for v in row[3:]])
