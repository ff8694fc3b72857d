"""Two-layer perceptron patch classifier with hand-written backprop and Adam.

The receptive field of one output is exactly one patch: the patch is
flattened, passed through a ReLU hidden layer and a sigmoid output unit.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from .bag_model import NumericError, Patch

PARAMS = ("w1", "b1", "w2", "b2")
CHECKPOINT_MAGIC = b"MCMILCK1"


class ShapeError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(eq=False)
class ClassifierState:
    patch_size: int
    w1: np.ndarray  # (hidden, patch_size**2)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: np.ndarray  # 0-d
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in PARAMS:
            self.m.setdefault(name, np.zeros_like(getattr(self, name)))
            self.v.setdefault(name, np.zeros_like(getattr(self, name)))

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAMS}

    def copy(self) -> "ClassifierState":
        return ClassifierState(
            self.patch_size, *(getattr(self, n).copy() for n in PARAMS),
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps, step=self.step,
            m={k: a.copy() for k, a in self.m.items()}, v={k: a.copy() for k, a in self.v.items()},
        )


@dataclass(eq=False)
class PatchGradient:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def init_classifier(patch_size: int, hidden: int = 64, seed: int = 0, lr: float = 1e-3,
                    beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ClassifierState:
    if hidden < 1:
        raise ValueError(f"hidden must be >= 1, got {hidden}")
    rng = np.random.default_rng([seed, 0x11])
    d = patch_size * patch_size
    w1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(hidden, d))
    w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=hidden)
    return ClassifierState(patch_size, w1, np.zeros(hidden), w2, np.zeros(()),
                           lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _as_batch(state: ClassifierState, patches) -> np.ndarray:
    x = np.asarray(patches, dtype=np.float64)
    s = state.patch_size
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (s, s):
        raise ShapeError(f"expected patches of shape ({s}, {s}), got {x.shape}")
    return x.reshape(len(x), s * s)


def _hidden(state: ClassifierState, x: np.ndarray) -> np.ndarray:
    return x @ state.w1.T + state.b1


def forward_batch(state: ClassifierState, patches) -> np.ndarray:
    """Scores for a stack of patches with shape (m, size, size)."""
    x = _as_batch(state, patches)
    h = np.maximum(_hidden(state, x), 0.0)
    return _sigmoid(h @ state.w2 + state.b2)


def forward(state: ClassifierState, patch) -> float:
    if isinstance(patch, Patch):
        patch = patch.pixels
    if np.ndim(patch) != 2:
        raise ShapeError(f"forward takes one 2-D patch, got shape {np.shape(patch)}")
    return float(forward_batch(state, patch)[0])


def backward_batch(state: ClassifierState, patches, upstream) -> PatchGradient:
    """Gradient of sum_i upstream[i] * y_i with respect to every parameter."""
    x = _as_batch(state, patches)
    u = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if len(u) != len(x):
        raise ShapeError(f"{len(x)} patches but {len(u)} upstream values")
    a = _hidden(state, x)
    h = np.maximum(a, 0.0)
    y = _sigmoid(h @ state.w2 + state.b2)
    gz = u * y * (1.0 - y)
    da = gz[:, None] * state.w2[None, :] * (a > 0)
    return PatchGradient(da.T @ x, da.sum(axis=0), h.T @ gz, np.asarray(gz.sum()))


def backward(state: ClassifierState, patch, upstream: float) -> PatchGradient:
    if isinstance(patch, Patch):
        patch = patch.pixels
    if np.ndim(patch) != 2:
        raise ShapeError(f"backward takes one 2-D patch, got shape {np.shape(patch)}")
    return backward_batch(state, patch, [upstream])


def adam_update(state: ClassifierState, grad: PatchGradient) -> ClassifierState:
    """One Adam step, applied in place. Returns ``state``."""
    grads = grad.as_dict()
    for name, g in grads.items():
        if g.shape != getattr(state, name).shape:
            raise ShapeError(f"gradient {name} has shape {g.shape}, expected {getattr(state, name).shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        param = getattr(state, name)
        param -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


# -- checkpoints ----------------------------------------------------------
# layout: magic, <u32 patch_size, <u32 hidden, then float64 LE arrays
# w1 b1 w2 b2, first moments (same order), second moments, <u64 step,
# and the four optimizer hyperparameters lr beta1 beta2 eps.

def _arrays(state: ClassifierState):
    yield from (getattr(state, n) for n in PARAMS)
    yield from (state.m[n] for n in PARAMS)
    yield from (state.v[n] for n in PARAMS)


def save_checkpoint(path: str | os.PathLike, state: ClassifierState) -> None:
    try:
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<II", state.patch_size, state.hidden))
            for arr in _arrays(state):
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            f.write(struct.pack("<Q", state.step))
            f.write(struct.pack("<4d", state.lr, state.beta1, state.beta2, state.eps))
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc.strerror}") from exc


def load_checkpoint(path: str | os.PathLike) -> ClassifierState:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:8]!r}")
    patch_size, hidden = struct.unpack_from("<II", data, 8)
    d = patch_size * patch_size
    shapes = [(hidden, d), (hidden,), (hidden,), ()]
    n_floats = 3 * sum(int(np.prod(s)) for s in shapes)
    expected = 16 + 8 * n_floats + 8 + 32
    if len(data) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes, got {len(data)}")
    offset = 16
    arrays = []
    for _ in range(3):
        for shape in shapes:
            count = int(np.prod(shape))
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64)
            arrays.append(arr.reshape(shape))
            offset += 8 * count
    (step,) = struct.unpack_from("<Q", data, offset)
    lr, beta1, beta2, eps = struct.unpack_from("<4d", data, offset + 8)
    params, m, v = arrays[:4], arrays[4:8], arrays[8:]
    return ClassifierState(patch_size, *params, lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=step,
                           m=dict(zip(PARAMS, m)), v=dict(zip(PARAMS, v)))
