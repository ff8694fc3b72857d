"""
Probability maps
================

Trains a Monte-Carlo model briefly, then writes the dense patch-score map of
a positive test bag next to its truth mask, and reports whether the top
patch lands on a target.
"""

# %%
from dataclasses import replace
from pathlib import Path

from mcmil import desk_experiment, load_data, probability_map, run_experiment, write_pgm
from mcmil.pgm import to_bytes

out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)

cfg = desk_experiment(layout="clustered", seed=2, epochs=8)
cfg = replace(cfg, data=replace(cfg.data, n_train=60, n_test=20))
train, test = load_data(cfg)
state = run_experiment(cfg, (train, test)).state

# %%
bag = next(b for b in test if b.label == 1)
grid, best = probability_map(state, bag, cfg.patch_size, stride=4)
write_pgm(out / "map.pgm", to_bytes(grid))
write_pgm(out / "map_bag.pgm", to_bytes(bag.pixels))
hit = bag.truth_mask[best.row:best.row + best.size, best.col:best.col + best.size].any()
print(f"map {grid.shape}, score range {grid.min():.3f}..{grid.max():.3f}")
print(f"top patch at ({best.row}, {best.col}) overlaps a target: {bool(hit)}")
