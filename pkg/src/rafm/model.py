"""Time-conditioned MLP velocity field with hand-written backprop, and Adam."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rafm.blobio import read_blob, write_blob
from rafm.numerics import Prng

WIDTH = 128
N_HIDDEN = 3


def sigmoid(x):
    # tanh form: exact identity, and an order of magnitude faster than expit here.
    return 0.5 + 0.5 * np.tanh(0.5 * x)


def swish(x):
    return x * sigmoid(x)


def param_count(d: int, width: int = WIDTH, n_hidden: int = N_HIDDEN) -> int:
    return (d + 1) * width + width + (n_hidden - 1) * (width * width + width) + width * d + d


@dataclass
class ForwardCache:
    inputs: list  # input to each linear layer
    pre: list  # pre-activations of hidden layers
    sig: list  # sigmoid of hidden pre-activations


class MLP:
    """v(t, x) = Linear(Swish(...Linear([x; t])...)), 3 hidden layers of width 128."""

    def __init__(self, d: int, rng: Prng | None = None, width: int = WIDTH,
                 n_hidden: int = N_HIDDEN, dtype=np.float32):
        if d < 1:
            raise ValueError("d must be >= 1")
        self.d = d
        self.width = width
        self.n_hidden = n_hidden
        self.dtype = np.dtype(dtype)
        sizes = [d + 1] + [width] * n_hidden + [d]
        self.shapes = list(zip(sizes[:-1], sizes[1:]))
        self.param_shapes = [s for fi, fo in self.shapes for s in ((fi, fo), (fo,))]
        chunks = []
        for fan_in, fan_out in self.shapes:
            if rng is None:
                w = np.zeros((fan_in, fan_out))
                b = np.zeros(fan_out)
            else:
                # Linear-layer default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
                k = 1.0 / np.sqrt(fan_in)
                w = rng.uniform((fan_out, fan_in)).T * (2 * k) - k
                b = rng.uniform(fan_out) * (2 * k) - k
            chunks += [w.ravel(), b]
        self._bind(np.concatenate(chunks).astype(self.dtype))

    def _bind(self, flat: np.ndarray) -> None:
        """Make ``params`` views into the single contiguous buffer ``flat``."""
        self.flat = flat
        self.params = []
        offset = 0
        for shape in self.param_shapes:
            size = int(np.prod(shape))
            self.params.append(flat[offset:offset + size].reshape(shape))
            offset += size
        if offset != flat.size:
            raise ValueError(f"flat buffer has {flat.size} values, expected {offset}")

    @property
    def n_params(self) -> int:
        return int(self.flat.size)

    def flatten_grads(self, grads: list[np.ndarray]) -> np.ndarray:
        return np.concatenate([g.ravel() for g in grads])

    def copy(self) -> "MLP":
        other = MLP.__new__(MLP)
        other.__dict__.update(self.__dict__)
        other._bind(self.flat.copy())
        return other

    def astype(self, dtype) -> "MLP":
        other = self.copy()
        other.dtype = np.dtype(dtype)
        other._bind(self.flat.astype(dtype))
        return other

    def _input(self, t, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ValueError(f"expected x of shape (B, {self.d}), got {x.shape}")
        t = np.broadcast_to(np.asarray(t, dtype=self.dtype), (x.shape[0],))
        return np.concatenate([x, t[:, None]], axis=1)

    def __call__(self, t, x, check_finite: bool = True) -> np.ndarray:
        h = self._input(t, x)
        if check_finite and not np.all(np.isfinite(h)):
            raise ValueError("non-finite input to the velocity field")
        n = len(self.shapes)
        for i in range(n):
            h = h @ self.params[2 * i]
            h += self.params[2 * i + 1]
            if i < n - 1:
                # In-place swish; this path dominates sampling cost.
                s = np.multiply(h, 0.5)
                np.tanh(s, out=s)
                s *= 0.5
                s += 0.5
                h *= s
        return h

    def forward(self, t, x) -> tuple[np.ndarray, ForwardCache]:
        h = self._input(t, x)
        if not np.all(np.isfinite(h)):
            raise ValueError("non-finite input to the velocity field")
        cache = ForwardCache([], [], [])
        n = len(self.shapes)
        for i in range(n):
            cache.inputs.append(h)
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n - 1:
                s = sigmoid(z)
                cache.pre.append(z)
                cache.sig.append(s)
                h = z * s
            else:
                h = z
        return h, cache

    def backward(self, cache: ForwardCache, upstream: np.ndarray) -> list[np.ndarray]:
        """Gradients of sum(upstream * output) w.r.t. every parameter."""
        g = np.asarray(upstream, dtype=self.dtype)
        n = len(self.shapes)
        grads: list[np.ndarray] = [None] * (2 * n)
        for i in reversed(range(n)):
            if i < n - 1:
                z, s = cache.pre[i], cache.sig[i]
                g = g * (s * (1.0 + z * (1.0 - s)))
            grads[2 * i] = cache.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ self.params[2 * i].T
        return grads

    # Persistence: JSON header + flat little-endian float32 parameters.

    def save(self, path: str | Path, step: int = 0) -> None:
        header = {"d": self.d, "width": self.width, "n_hidden": self.n_hidden,
                  "step": int(step), "shapes": [list(p.shape) for p in self.params]}
        write_blob(path, header, self.flat)

    @classmethod
    def load(cls, path: str | Path, dtype=np.float32) -> tuple["MLP", int]:
        header, flat = read_blob(path)
        model = cls(header["d"], None, header["width"], header["n_hidden"], dtype=dtype)
        if [list(s) for s in model.param_shapes] != header["shapes"]:
            raise ValueError(f"checkpoint shapes do not match an MLP with d={header['d']}")
        model._bind(flat.astype(dtype))
        return model, int(header["step"])


class Adam:
    """Bias-corrected Adam; hyperparameters default to lr=1e-3, (0.9, 0.999), eps=1e-8."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update ``params`` in place."""
        if len(params) != len(self.m):
            raise ValueError("parameter list does not match optimizer state")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        step_size = self.lr / bc1
        sqrt_bc2 = math.sqrt(bc2)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            denom = np.sqrt(v) / sqrt_bc2 + self.eps
            p -= (step_size * m / denom).astype(p.dtype)
