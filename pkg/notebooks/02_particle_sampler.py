"""
The Monte-Carlo patch sampler on its own
========================================

Runs the particle sampler against a fixed scorer that likes one square
region of the image. No learning is involved: the point is to watch the
particles drift towards the high-scoring area.
"""

# %%
import numpy as np

from mcmil import ImageBag, MCConfig, mc_init, mc_step

H = W = 256
SIZE = 32
TARGET = (180, 60)  # centre of the region the scorer rewards


def scorer(bag, coords):
    d = np.array([np.hypot(*np.subtract(c.center(), TARGET)) for c in coords])
    return np.exp(-(d / 40.0) ** 2)


bag = ImageBag("blank", np.zeros((H, W)), 0)
cfg = MCConfig(n=64, l=16, k=1, sigma=12.0, seed=0)
rng = np.random.default_rng(0)
ps = mc_init(H, W, cfg, rng, SIZE)

# %%
for step in range(15):
    ps = ps.invalidate()
    ps, evaluated = mc_step(ps, scorer, cfg, rng, bag)
    raw = np.array([e.raw_score for e in evaluated])
    if step % 3 == 0 or step == 14:
        print(f"step {step:2d}: mean score {raw.mean():.3f}, best {raw.max():.3f}")

# %% [markdown]
# After a few steps most particles sit close to the rewarded region.

# %%
centers = np.array([c.center() for c in ps.coords()])
dist = np.hypot(centers[:, 0] - TARGET[0], centers[:, 1] - TARGET[1])
print(f"particles within 40 px of the region: {(dist < 40).mean():.0%}")

# %% [markdown]
# Stochastic resampling picks victims at random, favouring low scores, so
# some particles keep exploring.

# %%
cfg_s = MCConfig(n=64, l=16, sigma=12.0, resample_mode="stochastic")
ps = mc_init(H, W, cfg_s, np.random.default_rng(1), SIZE)
for _ in range(15):
    ps, _ = mc_step(ps.invalidate(), scorer, cfg_s, rng, bag)
centers = np.array([c.center() for c in ps.coords()])
dist = np.hypot(centers[:, 0] - TARGET[0], centers[:, 1] - TARGET[1])
print(f"stochastic mode, within 40 px: {(dist < 40).mean():.0%}")
