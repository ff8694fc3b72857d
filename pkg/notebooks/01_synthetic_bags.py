"""
Synthetic bags of glyphs
========================

Builds a small sparse and a small clustered dataset from procedural glyphs,
prints a few statistics and writes one bag of each kind as PGM files under
``notebooks/out``.
"""

# %%
from pathlib import Path

import numpy as np

from mcmil import SynthConfig, generate_dataset, procedural_glyphs, write_pgm
from mcmil.pgm import to_bytes

out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)

glyphs = procedural_glyphs(seed=0)
print(f"{len(glyphs)} glyph tiles of {glyphs.glyph_size}x{glyphs.glyph_size}")
print("tiles per class:", np.bincount(glyphs.classes, minlength=10))

# %% [markdown]
# A bag is positive when at least one glyph of the target class is present.
# The truth mask marks the target bounding boxes and is only used for
# diagnostics, never for training.

# %%
for layout in ("sparse", "clustered"):
    cfg = SynthConfig(layout=layout, n_train=20, n_test=10, seed=1)
    train, test = generate_dataset(cfg, glyphs)
    labels = np.array([b.label for b in train])
    mask_share = np.mean([b.truth_mask.mean() for b in train if b.label == 1])
    print(f"{layout:9s} positives {labels.sum()}/{len(labels)}, "
          f"target area on positives {mask_share:.3%}")
    bag = next(b for b in train if b.label == 1)
    write_pgm(out / f"{layout}_bag.pgm", to_bytes(bag.pixels))
    write_pgm(out / f"{layout}_mask.pgm", to_bytes(bag.truth_mask))

# %% [markdown]
# Placement that cannot fit raises a ``PlacementError`` with a hint.

# %%
from mcmil.synth_data import PlacementError

try:
    generate_dataset(SynthConfig(bag_size=64, glyph_count_per_bag=12, n_train=2, n_test=2), glyphs)
except PlacementError as exc:
    print("placement failed:", exc)
