"""Conditional velocity network, prediction-target algebra and CFM training."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import bridge
from .bridge import BridgeConfig, PoleError
from .nn import AdamW, Layout, dense_entries, init_dense, silu, silu_grad
from .schedules import sample_training_time

log = logging.getLogger(__name__)

TARGET_KINDS = ("v", "x0", "eps")


class TrainingDivergedError(RuntimeError):
    pass


def time_embedding(t, cfg: BridgeConfig, n_freqs: int = 8):
    """Sin/cos features at ``n_freqs`` log-spaced angular frequencies whose
    periods span ``[sigma_min, sigma_max]``. Returns ``(B, 2 * n_freqs)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = 2.0 * np.pi / np.geomspace(4.0 * cfg.sigma_max, 4.0 * cfg.sigma_min, n_freqs)
    arg = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


@dataclass
class VelocityModel:
    """FiLM-conditioned MLP ``(a_t, t, c) -> R^D``.

    The head emits the network's native target: velocity, clean endpoint or
    injected noise depending on ``target``.
    """

    cfg: BridgeConfig
    horizon: int = 8
    context_dim: int = 8
    hidden: tuple = (128, 128)
    cond_hidden: int = 64
    n_freqs: int = 8
    input_scale: float = 5.0
    condition_on_prior: bool = True
    target: str = "v"
    params: np.ndarray | None = None

    def __post_init__(self):
        if self.target not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.target!r}")
        self.hidden = tuple(int(h) for h in self.hidden)
        self.layout = Layout(self._entries())
        if self.params is None:
            self.params = self.layout.zeros()
        else:
            self.params = np.asarray(self.params, dtype=np.float64).copy()
            if self.params.shape != (self.layout.size,):
                raise ValueError(
                    f"parameter vector has size {self.params.size}, architecture needs {self.layout.size}"
                )

    @property
    def D(self) -> int:
        return 2 * self.horizon

    @property
    def in_dim(self) -> int:
        return 2 * self.D if self.condition_on_prior else self.D

    @property
    def cond_dim(self) -> int:
        return 2 * self.n_freqs + self.context_dim

    def _entries(self):
        entries = dense_entries("cond", [self.cond_dim, self.cond_hidden])
        width_in = self.in_dim
        for i, w in enumerate(self.hidden):
            entries += [(f"h{i}.W", (width_in, w)), (f"h{i}.b", (w,)),
                        (f"film{i}.W", (self.cond_hidden, 2 * w)), (f"film{i}.b", (2 * w,))]
            width_in = w
        entries += [("out.W", (width_in, self.D)), ("out.b", (self.D,))]
        return entries

    def init(self, rng: np.random.Generator) -> "VelocityModel":
        p = self.layout.unflatten(self.params)
        init_dense(p, "cond", [self.cond_dim, self.cond_hidden], rng)
        width_in = self.in_dim
        for i, w in enumerate(self.hidden):
            bound = 1.0 / np.sqrt(width_in)
            p[f"h{i}.W"][...] = rng.uniform(-bound, bound, size=(width_in, w))
            p[f"h{i}.b"][...] = 0.0
            # small FiLM so every layer starts close to an unmodulated MLP
            bound = 0.1 / np.sqrt(self.cond_hidden)
            p[f"film{i}.W"][...] = rng.uniform(-bound, bound, size=(self.cond_hidden, 2 * w))
            p[f"film{i}.b"][...] = 0.0
            width_in = w
        p["out.W"][...] = 0.0
        p["out.b"][...] = 0.0
        return self

    def architecture(self) -> dict:
        return {
            "horizon": self.horizon,
            "context_dim": self.context_dim,
            "hidden": list(self.hidden),
            "cond_hidden": self.cond_hidden,
            "n_freqs": self.n_freqs,
            "input_scale": self.input_scale,
            "condition_on_prior": self.condition_on_prior,
        }

    def copy(self) -> "VelocityModel":
        return VelocityModel(cfg=self.cfg, target=self.target, params=self.params, **self.architecture())

    # -- forward / backward ------------------------------------------------

    def _forward(self, a_t, t, c, aT=None, params=None):
        params = self.params if params is None else params
        p = self.layout.unflatten(params)
        a_t = np.asarray(a_t, dtype=np.float64)
        batch_shape = a_t.shape[:-2]
        x = a_t.reshape(-1, self.D) / self.input_scale
        B = x.shape[0]
        if self.condition_on_prior:
            if aT is None:
                raise ValueError("this model is conditioned on the prior endpoint; pass aT")
            xT = np.broadcast_to(np.asarray(aT, dtype=np.float64), a_t.shape).reshape(B, self.D)
            x = np.concatenate([x, xT / self.input_scale], axis=1)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,)) if np.ndim(t) == 0 \
            else np.asarray(t, dtype=np.float64).reshape(B)
        c = np.asarray(c, dtype=np.float64).reshape(-1, self.context_dim)
        if c.shape[0] == 1 and B > 1:
            c = np.broadcast_to(c, (B, self.context_dim))
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t)) and np.all(np.isfinite(c))):
            raise ValueError("non-finite input to velocity model")
        cond = np.concatenate([time_embedding(t, self.cfg, self.n_freqs), c], axis=1)
        ez = cond @ p["cond0.W"] + p["cond0.b"]
        e = silu(ez)
        cache = {"cond": cond, "ez": ez, "e": e, "layers": []}
        h = x
        for i, w in enumerate(self.hidden):
            z = h @ p[f"h{i}.W"] + p[f"h{i}.b"]
            gb = e @ p[f"film{i}.W"] + p[f"film{i}.b"]
            gamma, beta = gb[:, :w], gb[:, w:]
            u = z * (1.0 + gamma) + beta
            cache["layers"].append((h, z, gamma, u))
            h = silu(u)
        out = h @ p["out.W"] + p["out.b"]
        cache["h_last"] = h
        return out.reshape(batch_shape + (self.horizon, 2)), cache

    def forward(self, a_t, t, c, aT=None) -> np.ndarray:
        """Raw head output with the same shape as ``a_t``."""
        return self._forward(a_t, t, c, aT)[0]

    __call__ = forward

    def backward(self, cache, dout, params=None) -> np.ndarray:
        """Flat gradient of a loss with ``d loss / d output = dout``."""
        params = self.params if params is None else params
        p = self.layout.unflatten(params)
        grad = self.layout.zeros()
        g = self.layout.unflatten(grad)
        d = np.asarray(dout).reshape(-1, self.D)
        g["out.W"] += cache["h_last"].T @ d
        g["out.b"] += d.sum(axis=0)
        dh = d @ p["out.W"].T
        de = np.zeros_like(cache["e"])
        for i in reversed(range(len(self.hidden))):
            w = self.hidden[i]
            h_in, z, gamma, u = cache["layers"][i]
            du = dh * silu_grad(u)
            dz = du * (1.0 + gamma)
            dgb = np.concatenate([du * z, du], axis=1)
            g[f"film{i}.W"] += cache["e"].T @ dgb
            g[f"film{i}.b"] += dgb.sum(axis=0)
            de += dgb @ p[f"film{i}.W"].T
            g[f"h{i}.W"] += h_in.T @ dz
            g[f"h{i}.b"] += dz.sum(axis=0)
            dh = dz @ p[f"h{i}.W"].T
        dez = de * silu_grad(cache["ez"])
        g["cond0.W"] += cache["cond"].T @ dez
        g["cond0.b"] += dez.sum(axis=0)
        return grad

    def velocity(self, a_t, t, c, aT) -> np.ndarray:
        """Velocity usable by the ODE sampler, converted from the native head."""
        return to_velocity(self.forward(a_t, t, c, aT), a_t, aT, t, self.cfg, self.target)


def _expand(t):
    t = np.asarray(t, dtype=np.float64)
    return float(t) if t.ndim == 0 else t[..., None, None]


def to_velocity(head, a_t, aT, t, cfg: BridgeConfig, target_kind: str) -> np.ndarray:
    """Convert a network head output into the ODE velocity.

    ``x0``: the predicted endpoint replaces ``a0`` in the conditional velocity.
    ``eps``: the endpoint is first recovered from the reparameterization.
    """
    head = np.asarray(head, dtype=np.float64)
    if target_kind == "v":
        return head
    if target_kind not in TARGET_KINDS:
        raise ValueError(f"unknown target kind {target_kind!r}")
    a_t = np.asarray(a_t, dtype=np.float64)
    s = np.asarray(bridge.interp_coeff(t, cfg))
    one_minus_s = 1.0 - s
    if np.any(one_minus_s < 1e-9):
        raise PoleError("to_velocity: 1 - s_t below 1e-9")
    if target_kind == "eps":
        sigma = _expand(bridge.bridge_std(t, cfg))
        x0_hat = (a_t - _expand(s) * aT - sigma * head) / _expand(one_minus_s)
    else:
        x0_hat = head
    mu_hat = bridge.bridge_mean(x0_hat, np.broadcast_to(aT, x0_hat.shape), t, cfg)
    g = _expand(bridge.dlog_sigma_dt(t, cfg))
    return bridge.dmu_dt(x0_hat, np.broadcast_to(aT, x0_hat.shape), t, cfg) + g * (a_t - mu_hat)


def cfm_targets(a0, aT, cfg: BridgeConfig, target_kind: str, rng=None, t=None, noise=None):
    """Draw ``(t, a_t)`` on the bridge and return ``(a_t, t, native_target)``."""
    a0 = np.asarray(a0, dtype=np.float64)
    B = a0.shape[0]
    if t is None:
        t = sample_training_time(rng, cfg, size=B)
    sample = bridge.sample_bridge(a0, aT, t, cfg, rng=rng, noise=noise)
    if target_kind == "v":
        target = bridge.target_velocity(sample, a0, aT, cfg)
    elif target_kind == "x0":
        target = a0
    elif target_kind == "eps":
        target = sample.noise
    else:
        raise ValueError(f"unknown target kind {target_kind!r}")
    return sample.a_t, np.asarray(sample.t), target


def cfm_loss_and_grad(model: VelocityModel, a0, aT, c, rng=None, t=None, noise=None,
                      params=None):
    """Mean-squared CFM loss over batch and components, and its flat gradient."""
    a_t, t, target = cfm_targets(a0, aT, model.cfg, model.target, rng=rng, t=t, noise=noise)
    out, cache = model._forward(a_t, t, c, aT, params=params)
    resid = out - target
    loss = float(np.mean(resid * resid))
    dout = 2.0 * resid / resid.size
    return loss, model.backward(cache, dout, params=params)


PriorSampler = Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]


@dataclass
class TrainState:
    model: VelocityModel
    optimizer: AdamW = field(default_factory=AdamW)
    batch_size: int = 256
    loss_trace: list = field(default_factory=list)

    @property
    def lr(self) -> float:
        return self.optimizer.lr

    @property
    def step(self) -> int:
        return self.optimizer.step


def train(state: TrainState, a0: np.ndarray, c: np.ndarray, prior: PriorSampler, epochs: int,
          rng: np.random.Generator) -> TrainState:
    """Simulation-free CFM training.

    Each minibatch draws a fresh prior endpoint per sample from ``prior(c, a0,
    rng)``, a training time and a bridge point. Appends the mean epoch loss to
    ``state.loss_trace``.
    """
    a0 = np.asarray(a0, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    n = a0.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    model = state.model
    for epoch in range(epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, state.batch_size):
            idx = order[start:start + state.batch_size]
            aT = prior(c[idx], a0[idx], rng)
            loss, grad = cfm_loss_and_grad(model, a0[idx], aT, c[idx], rng=rng)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, optimizer step {state.optimizer.step}"
                )
            state.optimizer.update(model.params, grad)
            total += loss * idx.size
            count += idx.size
        state.loss_trace.append(total / count)
        log.debug("epoch %d loss %.5f", epoch, state.loss_trace[-1])
    return state
