"""Command-line entry point: ``mcmil {generate,train,eval,map,compare}``.

Configuration comes from an optional JSON file whose keys mirror
:class:`~mcmil.harness.ExperimentConfig`. The nested objects ``data``,
``mc`` and ``grid`` override fields of the profile's dataset, sampler and
grid settings. Flags given on the command line win over the file.

Failures print a single line ``error: <kind>: <message>`` on stderr and
exit with status 1. Usage errors exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bag_model import ImageBag
from .harness import (
    PROFILES,
    STRATEGIES,
    ExperimentConfig,
    compare,
    evaluate,
    load_data,
    probability_map,
    run_experiment,
)
from .model import load_checkpoint
from .pgm import read_pgm, to_bytes, write_pgm
from .samplers import GridConfig, MCConfig
from .synth_data import load_dataset, load_idx, generate_dataset, procedural_glyphs, save_dataset

log = logging.getLogger("mcmil")

_NESTED = {"data", "mc", "grid"}


def _merge(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(overrides) - known - {"glyphs"}
    if unknown:
        raise KeyError(f"unknown config keys: {', '.join(sorted(unknown))}")
    flat = {k: v for k, v in overrides.items() if k in known and k not in _NESTED}
    cfg = replace(cfg, **flat)
    if "data" in overrides:
        cfg = replace(cfg, data=replace(cfg.data, **overrides["data"]))
    if "mc" in overrides:
        base = cfg.mc if cfg.mc is not None else MCConfig(n=1)
        cfg = replace(cfg, mc=replace(base, **overrides["mc"]))
    if "grid" in overrides:
        base = cfg.grid if cfg.grid is not None else GridConfig(cfg.patch_size)
        cfg = replace(cfg, grid=replace(base, **overrides["grid"]))
    return cfg


def build_config(args: argparse.Namespace) -> tuple[ExperimentConfig, dict]:
    """Profile defaults, then the JSON file, then command-line flags."""
    file_over: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            file_over = json.load(fh)
        if not isinstance(file_over, dict):
            raise ValueError("config file must hold a JSON object")
    layout = getattr(args, "layout", None) or file_over.get("data", {}).get("layout", "sparse")
    seed = args.seed if args.seed is not None else int(file_over.get("seed", 0))
    cfg = PROFILES[args.profile](layout=layout, seed=seed)
    cfg = _merge(cfg, file_over)
    flag_over = {"seed": seed, "data": {"seed": seed, "layout": layout}}
    if cfg.mc is not None:
        flag_over["mc"] = {"seed": seed}
    for name in ("strategy", "epochs", "data_dir"):
        value = getattr(args, name, None)
        if value is not None:
            flag_over[name] = value
    if getattr(args, "workers", None) is not None:
        flag_over["workers"] = args.workers
    if getattr(args, "sequential", False):
        flag_over["workers"] = 1
    if args.out is not None:
        flag_over["outdir"] = args.out
    cfg = _merge(cfg, flag_over)
    cfg.validate()
    return cfg, file_over.get("glyphs") or {}


def _glyphs(cfg: ExperimentConfig, spec: dict):
    if spec:
        return load_idx(spec["images"], spec["labels"])
    return procedural_glyphs(cfg.data.seed, size=cfg.data.glyph_size)


def _parse_seeds(text: str) -> list[int]:
    if "," in text:
        return [int(s) for s in text.split(",") if s.strip()]
    count = int(text)
    if count < 1:
        raise argparse.ArgumentTypeError("--seeds needs a positive count or a comma list")
    return list(range(count))


# -- subcommands ----------------------------------------------------------

def cmd_generate(args) -> int:
    cfg, glyph_spec = build_config(args)
    out = args.out or "dataset"
    train, test = generate_dataset(cfg.data, _glyphs(cfg, glyph_spec))
    save_dataset(out, train, test)
    print(f"wrote {len(train)} train and {len(test)} test bags to {out}")
    return 0


def cmd_train(args) -> int:
    cfg, glyph_spec = build_config(args)
    data = None if cfg.data_dir else generate_dataset(cfg.data, _glyphs(cfg, glyph_spec))
    result = run_experiment(cfg, data)
    print(f"test_acc={result.test_acc:.4f}")
    return 0


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    train, test = load_dataset(args.data)
    bags = test if args.split == "test" else train
    acc = evaluate(state, bags, state.patch_size, args.overlap)
    print(f"accuracy={acc:.4f}")
    return 0


def cmd_map(args) -> int:
    state = load_checkpoint(args.checkpoint)
    pixels = read_pgm(args.image).astype(np.float64) / 255.0
    bag = ImageBag(Path(args.image).stem, pixels, 0)
    stride = args.stride or max(1, state.patch_size // 2)
    grid, best = probability_map(state, bag, state.patch_size, stride)
    out = args.out or "map.pgm"
    write_pgm(out, to_bytes(grid))
    print(f"map {grid.shape[0]}x{grid.shape[1]} written to {out}; "
          f"max at row={best.row} col={best.col}")
    return 0


def cmd_compare(args) -> int:
    cfg, glyph_spec = build_config(args)
    if glyph_spec:
        raise ValueError("compare uses procedural glyphs; drop the glyphs key")
    strategies = args.strategies.split(",") if args.strategies else list(STRATEGIES)
    out = args.out or "compare"
    rows = compare(replace(cfg, outdir=None), args.seeds, strategies, out)
    for dataset, strategy, seed, acc in rows:
        print(f"{dataset},{strategy},{seed},{acc:.4f}")
    return 0


def _common(p: argparse.ArgumentParser, experiment: bool = True) -> None:
    p.add_argument("--config", help="JSON file with config overrides")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory or file")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    if experiment:
        p.add_argument("--layout", choices=("sparse", "clustered"), default=None)
        p.add_argument("--strategy", choices=STRATEGIES, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--data-dir", dest="data_dir", default=None,
                       help="train from a PGM+manifest directory instead of generating")
        mode = p.add_mutually_exclusive_group()
        mode.add_argument("--sequential", action="store_true",
                          help="single-threaded evaluation; bitwise reproducible")
        mode.add_argument("--workers", type=int, default=None)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcmil", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset as PGM files plus manifest")
    _common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one strategy and write artifacts")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset directory")
    _common(p, experiment=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory from `generate`")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--overlap", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("map", help="probability map of one PGM image")
    _common(p, experiment=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("compare", help="all strategies over shared seeds, writes summary.csv")
    _common(p)
    p.add_argument("--seeds", type=_parse_seeds, default=[0, 1, 2],
                   help="a count N (seeds 0..N-1) or a comma list")
    p.add_argument("--strategies", default=None, help="comma list, default all three")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # one parsable line instead of a traceback
        message = " ".join(str(exc).split()) or "no details"
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
