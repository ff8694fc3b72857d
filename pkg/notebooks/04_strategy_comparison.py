"""
Grid, uniform and Monte-Carlo training side by side
===================================================

Trains the three strategies on the same desk-profile dataset and prints the
test accuracy per epoch, plus the share of Monte-Carlo training patches
centred on target glyphs. Each run takes well under a minute on one core.
Pass a layout name (``sparse`` or ``clustered``) as the first argument.
"""

# %%
import sys
from dataclasses import replace

from mcmil import desk_experiment, load_data, run_experiment

layout = sys.argv[1] if len(sys.argv) > 1 else "sparse"
cfg = desk_experiment(layout=layout, seed=0)
data = load_data(cfg)

# %%
for strategy in ("grid", "uniform", "monte_carlo"):
    result = run_experiment(replace(cfg, strategy=strategy), data)
    curve = " ".join(f"{m.test_acc:.2f}" for m in result.metrics)
    print(f"{strategy:12s} test acc per epoch: {curve}")
    if strategy == "monte_carlo":
        first, last = result.metrics[0].hit_rate, result.metrics[-1].hit_rate
        print(f"{'':12s} particle hit-rate on targets: {first:.3f} -> {last:.3f}")
