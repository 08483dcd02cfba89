"""Small numpy building blocks: flat parameter layouts, MLP layers with
hand-written backward passes, and a decoupled-weight-decay Adam optimizer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _sigmoid(x):
    # tanh form: no overflow for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x):
    return x * _sigmoid(x)


def silu_grad(x):
    sig = _sigmoid(x)
    return sig * (1.0 + x * (1.0 - sig))


class Layout:
    """Maps named parameter blocks onto one flat float64 vector."""

    def __init__(self, entries):
        self.entries = []
        self.slices = {}
        self.shapes = {}
        offset = 0
        for name, shape in entries:
            if name in self.slices:
                raise ValueError(f"duplicate parameter block {name!r}")
            size = int(np.prod(shape))
            self.slices[name] = slice(offset, offset + size)
            self.shapes[name] = tuple(shape)
            self.entries.append((name, tuple(shape)))
            offset += size
        self.size = offset

    def unflatten(self, vec: np.ndarray) -> dict:
        """Dict of reshaped *views* into ``vec``; writes propagate back."""
        if vec.shape != (self.size,):
            raise ValueError(f"expected flat vector of size {self.size}, got {vec.shape}")
        return {name: vec[self.slices[name]].reshape(self.shapes[name]) for name in self.slices}

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size, dtype=np.float64)


def dense_entries(prefix: str, sizes) -> list:
    out = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        out.append((f"{prefix}{i}.W", (fan_in, fan_out)))
        out.append((f"{prefix}{i}.b", (fan_out,)))
    return out


def init_dense(params: dict, prefix: str, sizes, rng: np.random.Generator, zero_last=False):
    """Uniform fan-in init; biases zero."""
    n = len(sizes) - 1
    for i, (fan_in, _) in enumerate(zip(sizes[:-1], sizes[1:])):
        W = params[f"{prefix}{i}.W"]
        if zero_last and i == n - 1:
            W[...] = 0.0
        else:
            bound = 1.0 / np.sqrt(fan_in)
            W[...] = rng.uniform(-bound, bound, size=W.shape)
        params[f"{prefix}{i}.b"][...] = 0.0


def mlp_forward(params: dict, prefix: str, n_layers: int, x: np.ndarray):
    """SiLU MLP with a linear head. Returns output and a backward cache."""
    cache = []
    h = x
    for i in range(n_layers):
        z = h @ params[f"{prefix}{i}.W"] + params[f"{prefix}{i}.b"]
        cache.append((h, z))
        h = silu(z) if i < n_layers - 1 else z
    return h, cache


def mlp_backward(params: dict, grads: dict, prefix: str, cache, dout: np.ndarray):
    """Accumulate parameter gradients into ``grads``; return d(loss)/d(input)."""
    n_layers = len(cache)
    d = dout
    for i in reversed(range(n_layers)):
        h, z = cache[i]
        if i < n_layers - 1:
            d = d * silu_grad(z)
        grads[f"{prefix}{i}.W"] += h.T @ d
        grads[f"{prefix}{i}.b"] += d.sum(axis=0)
        d = d @ params[f"{prefix}{i}.W"].T
    return d


@dataclass
class AdamW:
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step: int = 0
    clip_norm: float | None = None

    def update(self, theta: np.ndarray, grad: np.ndarray) -> None:
        """In-place parameter update."""
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        if self.clip_norm is not None:
            norm = np.linalg.norm(grad)
            if norm > self.clip_norm:
                grad = grad * (self.clip_norm / norm)
        b1, b2 = self.betas
        self.step += 1
        self.m *= b1
        self.m += (1.0 - b1) * grad
        self.v *= b2
        self.v += (1.0 - b2) * grad * grad
        mhat = self.m / (1.0 - b1 ** self.step)
        vhat = self.v / (1.0 - b2 ** self.step)
        theta -= self.lr * self.weight_decay * theta
        theta -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
