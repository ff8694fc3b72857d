"""
Patch classifier and MIL aggregation
====================================

A two-layer perceptron scores patches; a bag score is the max (or the mean
of the top K) of its patch scores, and only the contributing patches
receive gradient.
"""

# %%
import numpy as np

from mcmil import aggregate_max, aggregate_topk, bag_loss_and_grads
from mcmil.model import adam_update, backward_batch, forward_batch, init_classifier

rng = np.random.default_rng(0)
state = init_classifier(patch_size=8, hidden=16, seed=0, lr=1e-3)
patches = rng.uniform(size=(10, 8, 8))
scores = forward_batch(state, patches)
print("patch scores:", np.round(scores, 3))

# %%
for pred in (aggregate_max(scores), aggregate_topk(scores, 3)):
    loss, grads = bag_loss_and_grads(pred, label=1)
    print(f"bag score {pred.score:.3f}  loss {loss:.3f}  "
          f"contributors {pred.contributors.tolist()}  nonzero grads {np.flatnonzero(grads).tolist()}")

# %% [markdown]
# A toy problem: positive bags hold one bright patch, negative bags hold
# none. Max-aggregation training finds it from bag labels alone.

# %%
def toy_bag(label):
    x = rng.uniform(0, 0.3, size=(10, 8, 8))
    if label:
        x[rng.integers(10)] += 0.6
    return x


for step in range(1500):
    label = step % 2
    x = toy_bag(label)
    pred = aggregate_max(forward_batch(state, x))
    _, g = bag_loss_and_grads(pred, label)
    idx = pred.contributors
    adam_update(state, backward_batch(state, x[idx], g[idx]))

acc = np.mean([(aggregate_max(forward_batch(state, toy_bag(y))).score > 0.5) == y
               for y in [0, 1] * 100])
print(f"toy bag accuracy after training: {acc:.2f}")
