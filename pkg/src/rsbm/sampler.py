"""Few-step probability-flow ODE integration from the prior endpoint to t=0."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bridge
from .bridge import BridgeConfig
from .schedules import TimestepSchedule, karras_schedule

SOLVERS = ("heun", "euler")


class IntegrationError(RuntimeError):
    pass


def nfe_of(solver: str, k: int) -> int:
    """Network evaluations used by ``k`` steps of ``solver``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if solver == "heun":
        return 2 * k - 1
    if solver == "euler":
        return k
    raise ValueError(f"unknown solver {solver!r}")


@dataclass
class SamplerConfig:
    solver: str = "heun"
    k: int = 3
    schedule: TimestepSchedule | None = None
    nfe_counter: int = 0

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.schedule is not None and self.schedule.k != self.k:
            raise ValueError(f"schedule has {self.schedule.k} steps, sampler expects {self.k}")


class AnalyticField:
    """The conditional target velocity with known endpoints, used as an
    exact reference model: ``dmu/dt + dlog(sigma)/dt * (a - mu_t)``."""

    def __init__(self, a0, aT, cfg: BridgeConfig):
        self.a0 = np.asarray(a0, dtype=np.float64)
        self.aT = np.asarray(aT, dtype=np.float64)
        self.cfg = cfg

    def velocity(self, a_t, t, c=None, aT=None):
        mu = bridge.bridge_mean(self.a0, self.aT, t, self.cfg)
        return bridge.dmu_dt(self.a0, self.aT, t, self.cfg) + bridge.dlog_sigma_dt(t, self.cfg) * (a_t - mu)

    def exact(self, t, t_start, a_start):
        """Closed-form ODE solution through ``(t_start, a_start)``."""
        cfg = self.cfg
        ratio = bridge.bridge_std(t, cfg) / bridge.bridge_std(t_start, cfg)
        return (bridge.bridge_mean(self.a0, self.aT, t, cfg)
                + (a_start - bridge.bridge_mean(self.a0, self.aT, t_start, cfg)) * ratio)


@dataclass
class ConstantField:
    value: np.ndarray | float = 0.0

    def velocity(self, a_t, t, c=None, aT=None):
        return np.broadcast_to(np.asarray(self.value, dtype=np.float64), np.shape(a_t)).copy()


def _integrate(model, aT, c, cfg: BridgeConfig, sampler_cfg: SamplerConfig, solver: str):
    schedule = sampler_cfg.schedule or karras_schedule(sampler_cfg.k, cfg)
    ts = schedule.steps
    aT = np.asarray(aT, dtype=np.float64)
    a = aT.copy()
    nfe = 0

    def evaluate(x, t):
        nonlocal nfe
        nfe += 1
        return model.velocity(x, t, c, aT)

    for i in range(len(ts) - 1):
        t, t_next = ts[i], ts[i + 1]
        dt = t_next - t  # signed, negative
        d1 = evaluate(a, t)
        if solver == "heun" and t_next > 0:
            a_pred = a + d1 * dt
            d2 = evaluate(a_pred, t_next)
            a = a + 0.5 * (d1 + d2) * dt
        else:
            # Euler everywhere, and Heun's last leg into t=0 where the field is singular
            a = a + d1 * dt
        if not np.all(np.isfinite(a)):
            raise IntegrationError(f"non-finite state after step {i} (t={t:g} -> {t_next:g})")
    sampler_cfg.nfe_counter += nfe
    return a, nfe


def heun_integrate(model, aT, c, cfg: BridgeConfig, sampler_cfg: SamplerConfig):
    """Second-order Heun integration; returns ``(a0_hat, nfe)`` with nfe = 2k-1."""
    return _integrate(model, aT, c, cfg, sampler_cfg, "heun")


def euler_integrate(model, aT, c, cfg: BridgeConfig, sampler_cfg: SamplerConfig):
    """First-order Euler integration; returns ``(a0_hat, nfe)`` with nfe = k."""
    return _integrate(model, aT, c, cfg, sampler_cfg, "euler")


def integrate(model, aT, c, cfg: BridgeConfig, sampler_cfg: SamplerConfig):
    if sampler_cfg.solver == "heun":
        return heun_integrate(model, aT, c, cfg, sampler_cfg)
    return euler_integrate(model, aT, c, cfg, sampler_cfg)
