"""Training and evaluation of the patch classifier under each sampling strategy."""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .bag_model import ImageBag, NumericError, PatchCoord, extract_patches
from .mil import aggregator as make_aggregator
from .mil import aggregate_max, bag_loss_and_grads
from .model import ClassifierState, adam_update, backward_batch, forward_batch, init_classifier
from .pgm import to_bytes, write_pgm
from .samplers import (
    GridConfig,
    MCConfig,
    ParticleSet,
    Scorer,
    grid_positions,
    mc_init,
    mc_normalize,
    mc_step,
    uniform_positions,
    write_trace,
)
from .synth_data import SynthConfig, desk_config, paper_config

log = logging.getLogger(__name__)

STRATEGIES = ("grid", "uniform", "monte_carlo")
METRICS_HEADER = ["epoch", "train_acc", "test_acc", "loss", "seconds"]
SUMMARY_HEADER = ["dataset", "strategy", "seed", "test_acc"]


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one training run needs.

    ``budget`` is the number of patches scored per bag visit. When left
    as None it is the patch count of the non-overlapping training grid, so
    all three strategies see the same number of patches.
    """

    data: SynthConfig = field(default_factory=SynthConfig)
    data_dir: Optional[str] = None
    strategy: str = "monte_carlo"
    patch_size: int = 32
    budget: Optional[int] = None
    aggregator: str = "max"
    topk: int = 10
    epochs: int = 25
    mc: Optional[MCConfig] = None
    grid: Optional[GridConfig] = None
    mc_persist: bool = True
    hidden: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_overlap: float = 0.5
    seed: int = 0
    outdir: Optional[str] = None
    workers: int = 1
    trace_bags: int = 0

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.budget is not None and self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.aggregator not in ("max", "topk"):
            raise ConfigError(f"aggregator must be max or topk, got {self.aggregator!r}")
        if self.topk < 1:
            raise ConfigError("topk must be >= 1")
        if not 0.0 <= self.eval_overlap < 1.0:
            raise ConfigError("eval_overlap must lie in [0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def train_grid(self) -> GridConfig:
        return self.grid if self.grid is not None else GridConfig(self.patch_size, 0.0)

    def resolve_budget(self, height: int, width: int) -> int:
        if self.budget is not None:
            return self.budget
        return len(grid_positions(height, width, self.train_grid))

    def resolve_mc(self, budget: int) -> MCConfig:
        mc = self.mc
        if mc is None:
            mc = MCConfig(n=budget, l=max(1, budget // 4), k=1, sigma=self.patch_size / 2.0,
                          seed=self.seed)
        if mc.n != budget:
            raise ConfigError(f"particle count n={mc.n} must equal the patch budget {budget}")
        mc.validate()
        return mc


def desk_experiment(strategy: str = "monte_carlo", layout: str = "sparse", seed: int = 0,
                    **overrides) -> ExperimentConfig:
    cfg = ExperimentConfig(
        data=desk_config(layout, seed),
        strategy=strategy,
        patch_size=32,
        budget=64,
        epochs=25,
        # stochastic resampling and the lower learning rate are the settings under
        # which the particle sampler beats uniform sampling at this scale
        mc=MCConfig(n=64, l=16, k=1, sigma=16.0, resample_mode="stochastic", seed=seed),
        lr=3e-4,
        seed=seed,
    )
    return replace(cfg, **overrides)


def paper_experiment(strategy: str = "monte_carlo", layout: str = "sparse", seed: int = 0,
                     **overrides) -> ExperimentConfig:
    cfg = ExperimentConfig(
        data=paper_config(layout, seed),
        strategy=strategy,
        patch_size=40,
        budget=625,
        epochs=40,
        mc=MCConfig(n=625, l=156, k=1, sigma=20.0, resample_mode="deterministic", seed=seed),
        seed=seed,
    )
    return replace(cfg, **overrides)


PROFILES = {"desk": desk_experiment, "paper": paper_experiment}


@dataclass
class EpochMetrics:
    epoch: int
    train_acc: float
    test_acc: float
    loss: float
    seconds: float
    # share of scored training patches centred on a target, over positive bags
    hit_rate: float = math.nan


@dataclass
class TrainLog:
    """Side products of a run that do not belong in the per-epoch metrics."""

    positions: dict = field(default_factory=dict)  # bag id -> coords of the last visit
    traces: list = field(default_factory=list)
    keep_history: bool = False
    history: dict = field(default_factory=dict)  # bag id -> coords of every visit, in order


# -- scoring helpers ------------------------------------------------------

Model = Union[ClassifierState, Scorer]


def state_scorer(state: ClassifierState) -> Scorer:
    def score(bag: ImageBag, coords: Sequence[PatchCoord]) -> np.ndarray:
        if len(coords) == 0:
            return np.empty(0)
        return forward_batch(state, extract_patches(bag.pixels, coords))
    return score


def _as_scorer(model: Model) -> Scorer:
    return state_scorer(model) if isinstance(model, ClassifierState) else model


def _hit_fraction(bag: ImageBag, coords: Sequence[PatchCoord]) -> float:
    mask = bag.truth_mask
    centers = [(c.row + c.size // 2, c.col + c.size // 2) for c in coords]
    return float(np.mean([mask[r, c] for r, c in centers])) if centers else math.nan


# -- training -------------------------------------------------------------

def _positions_for_visit(cfg, bag_index, bag, state, rngs, grid_cache, particles, mc, budget,
                         tlog, epoch):
    """Patch coords and (when already known) their scores for one bag visit."""
    size = cfg.patch_size
    rng = rngs[bag_index]
    if cfg.strategy == "grid":
        key = bag.shape
        if key not in grid_cache:
            grid_cache[key] = grid_positions(bag.height, bag.width, cfg.train_grid)
        return grid_cache[key], None
    if cfg.strategy == "uniform":
        return uniform_positions(bag.height, bag.width, budget, rng, size), None

    ps = particles.get(bag_index)
    if ps is None or not cfg.mc_persist:
        ps = mc_init(bag.height, bag.width, mc, rng, size, bag.id)
    else:
        # weights changed since the last visit, cached scores are stale
        ps = ps.invalidate()
    scorer = state_scorer(state)
    latest: dict[int, tuple[PatchCoord, float]] = {}
    for j in range(mc.k):
        ps, evaluated = mc_step(ps, scorer, mc, rng, bag)
        for ev in evaluated:
            latest[ev.index] = (ev.coord, ev.raw_score)
        if bag_index < cfg.trace_bags and evaluated:
            norm = mc_normalize([ev.raw_score for ev in evaluated])
            for ev, ns in zip(evaluated, norm):
                r, c = ev.coord.center()
                tlog.traces.append((bag.id, epoch * mc.k + j, ev.index, r, c, ev.raw_score, float(ns)))
    particles[bag_index] = ps
    order = sorted(latest)
    return [latest[i][0] for i in order], np.array([latest[i][1] for i in order])


def train(cfg: ExperimentConfig, train_bags: Sequence[ImageBag],
          test_bags: Optional[Sequence[ImageBag]] = None, tlog: Optional[TrainLog] = None,
          state: Optional[ClassifierState] = None):
    """Train one classifier; returns ``(state, metrics)``, one metrics row per epoch."""
    cfg.validate()
    if not train_bags:
        raise ConfigError("training set is empty")
    tlog = tlog if tlog is not None else TrainLog()
    size = cfg.patch_size
    h0, w0 = train_bags[0].shape
    budget = cfg.resolve_budget(h0, w0)
    mc = cfg.resolve_mc(budget) if cfg.strategy == "monte_carlo" else None
    if state is None:
        state = init_classifier(size, cfg.hidden, cfg.seed, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    aggregate = make_aggregator(cfg.aggregator, cfg.topk)

    shuffle_rng = np.random.default_rng([cfg.seed, 0x5EED])
    rngs = [np.random.default_rng([cfg.seed, 0xB46, i]) for i in range(len(train_bags))]
    grid_cache: dict = {}
    particles: dict[int, ParticleSet] = {}
    metrics: list[EpochMetrics] = []

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        losses, correct, hits = [], 0, []
        for i in shuffle_rng.permutation(len(train_bags)):
            i = int(i)
            bag = train_bags[i]
            coords, scores = _positions_for_visit(
                cfg, i, bag, state, rngs, grid_cache, particles, mc, budget, tlog, epoch)
            if scores is None:
                patches = extract_patches(bag.pixels, coords)
                scores = forward_batch(state, patches)
            pred = aggregate(scores)
            loss, grads = bag_loss_and_grads(pred, bag.label)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch + 1}, bag {bag.id}: score={pred.score!r}")
            losses.append(loss)
            correct += int((pred.score > 0.5) == bool(bag.label))
            if bag.label == 1 and bag.truth_mask is not None:
                hits.append(_hit_fraction(bag, coords))
            tlog.positions[bag.id] = coords
            if tlog.keep_history:
                tlog.history.setdefault(bag.id, []).append(list(coords))

            idx = pred.contributors
            sub = extract_patches(bag.pixels, [coords[j] for j in idx])
            try:
                adam_update(state, backward_batch(state, sub, grads[idx]))
            except NumericError as exc:
                raise TrainingError(f"epoch {epoch + 1}, bag {bag.id}: {exc}") from exc

        test_acc = evaluate(state, test_bags, size, cfg.eval_overlap, cfg.workers) if test_bags else math.nan
        m = EpochMetrics(
            epoch=epoch + 1,
            train_acc=correct / len(train_bags),
            test_acc=test_acc,
            loss=float(np.mean(losses)),
            seconds=time.perf_counter() - t0,
            hit_rate=float(np.mean(hits)) if hits else math.nan,
        )
        log.info("epoch %d: train %.3f test %.3f loss %.4f", m.epoch, m.train_acc, m.test_acc, m.loss)
        metrics.append(m)
    return state, metrics


# -- evaluation -----------------------------------------------------------

def _grid_scores(model: Model, bag: ImageBag, patch_size: int, stride: int) -> np.ndarray:
    if isinstance(model, ClassifierState):
        windows = sliding_window_view(bag.pixels, (patch_size, patch_size))[::stride, ::stride]
        nr, nc = windows.shape[:2]
        flat = windows.reshape(nr * nc, patch_size, patch_size)
        return forward_batch(model, flat).reshape(nr, nc)
    rows = range(0, bag.height - patch_size + 1, stride)
    cols = range(0, bag.width - patch_size + 1, stride)
    coords = [PatchCoord(r, c, patch_size) for r in rows for c in cols]
    return np.asarray(model(bag, coords), dtype=np.float64).reshape(len(rows), len(cols))


def predict_bag(model: Model, bag: ImageBag, patch_size: int, overlap: float = 0.5) -> float:
    """Bag score from a grid at the given overlap, aggregated with max."""
    stride = GridConfig(patch_size, overlap).stride
    return aggregate_max(_grid_scores(model, bag, patch_size, stride).ravel()).score


def evaluate(model: Model, bags: Sequence[ImageBag], patch_size: int, overlap: float = 0.5,
             workers: int = 1) -> float:
    """Fraction of bags whose grid-max score lands on the correct side of 0.5."""
    if not bags:
        return math.nan

    def correct(bag):
        return (predict_bag(model, bag, patch_size, overlap) > 0.5) == bool(bag.label)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            hits = list(pool.map(correct, bags))
    else:
        hits = [correct(b) for b in bags]
    return float(np.mean(hits))


def probability_map(model: Model, bag: ImageBag, patch_size: int, stride: int):
    """Dense patch scores on a stride grid, plus the top-scoring patch."""
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    grid = _grid_scores(model, bag, patch_size, stride)
    i, j = np.unravel_index(int(np.argmax(grid)), grid.shape)
    return grid, PatchCoord(int(i) * stride, int(j) * stride, patch_size)


# -- artifacts ------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_metrics(path, metrics: Iterable[EpochMetrics], timing: bool = True) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for m in metrics:
            seconds = m.seconds if timing else 0.0
            w.writerow([m.epoch, _fmt(m.train_acc), _fmt(m.test_acc), _fmt(m.loss), _fmt(seconds)])


def write_timing(path, metrics: Iterable[EpochMetrics]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "seconds"])
        for m in metrics:
            w.writerow([m.epoch, _fmt(m.seconds)])


def write_summary(path, rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for dataset, strategy, seed, acc in rows:
            w.writerow([dataset, strategy, int(seed), _fmt(acc)])


def export_artifacts(outdir, metrics: Sequence[EpochMetrics] = (), maps: Optional[dict] = None,
                     traces: Optional[Sequence] = None, summary: Optional[Sequence] = None,
                     timing: bool = True) -> list[Path]:
    """Write run outputs under ``outdir``; returns the paths written.

    With ``timing=False`` the seconds column of metrics.csv is zeroed so
    repeated runs are byte-identical; the measured times then go to
    timing.csv instead.
    """
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {outdir}: {exc.strerror}") from exc
    written = [outdir / "metrics.csv"]
    write_metrics(written[0], metrics, timing)
    if not timing:
        written.append(outdir / "timing.csv")
        write_timing(written[-1], metrics)
    if any(not math.isnan(m.hit_rate) for m in metrics):
        path = outdir / "focus.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "hit_rate"])
            for m in metrics:
                w.writerow([m.epoch, _fmt(m.hit_rate)])
        written.append(path)
    for name, grid in (maps or {}).items():
        path = outdir / f"{name}.pgm"
        write_pgm(path, to_bytes(grid))
        written.append(path)
    if traces is not None:
        written.append(outdir / "particles.csv")
        write_trace(written[-1], traces)
    if summary is not None:
        written.append(outdir / "summary.csv")
        write_summary(written[-1], summary)
    return written


# -- experiments ----------------------------------------------------------

def load_data(cfg: ExperimentConfig, glyphs=None):
    from .synth_data import generate_dataset, load_dataset, procedural_glyphs

    if cfg.data_dir is not None:
        return load_dataset(cfg.data_dir)
    glyphs = glyphs if glyphs is not None else procedural_glyphs(cfg.data.seed, size=cfg.data.glyph_size)
    return generate_dataset(cfg.data, glyphs)


@dataclass
class RunResult:
    config: ExperimentConfig
    state: ClassifierState
    metrics: list
    log: TrainLog

    @property
    def test_acc(self) -> float:
        return self.metrics[-1].test_acc


def run_experiment(cfg: ExperimentConfig, data=None) -> RunResult:
    train_bags, test_bags = data if data is not None else load_data(cfg)
    tlog = TrainLog()
    state, metrics = train(cfg, train_bags, test_bags, tlog)
    if cfg.outdir is not None:
        from .model import save_checkpoint

        maps = {}
        positives = [b for b in test_bags if b.label == 1]
        if positives:
            grid, _ = probability_map(state, positives[0], cfg.patch_size,
                                      GridConfig(cfg.patch_size, cfg.eval_overlap).stride)
            maps[f"map_{positives[0].id}"] = grid
        export_artifacts(cfg.outdir, metrics, maps, tlog.traces if cfg.trace_bags else None,
                         timing=cfg.workers > 1)
        save_checkpoint(Path(cfg.outdir) / "model.ckpt", state)
    return RunResult(cfg, state, metrics, tlog)


def compare(base: ExperimentConfig, seeds: Sequence[int], strategies: Sequence[str] = STRATEGIES,
            outdir=None):
    """Train every strategy on the same per-seed dataset; returns summary rows."""
    rows = []
    dataset = base.data.layout if base.data_dir is None else Path(base.data_dir).name
    for seed in seeds:
        data_cfg = replace(base.data, seed=seed)
        cfg0 = replace(base, data=data_cfg, seed=seed)
        data = load_data(cfg0)
        for strategy in strategies:
            mc = replace(base.mc, seed=seed) if base.mc is not None else None
            run_out = None if outdir is None else str(Path(outdir) / f"{strategy}-seed{seed}")
            cfg = replace(cfg0, strategy=strategy, mc=mc, outdir=run_out)
            result = run_experiment(cfg, data)
            rows.append((dataset, strategy, seed, result.test_acc))
            log.info("%s seed %d %s: %.3f", dataset, seed, strategy, result.test_acc)
    if outdir is not None:
        Path(outdir).mkdir(parents=True, exist_ok=True)
        write_summary(Path(outdir) / "summary.csv", rows)
    return rows
