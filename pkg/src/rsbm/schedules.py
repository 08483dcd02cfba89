"""Inference timestep schedules and the training-time sampler."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bridge import BridgeConfig


@dataclass(frozen=True)
class TimestepSchedule:
    """Strictly decreasing integration nodes ``t_0 > ... > t_k``.

    ``steps[:-1]`` are the evaluation nodes; the terminal node is 0 and is
    reached by a final slope-only step.
    """

    steps: np.ndarray
    rho: float = 7.0

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.float64)
        if steps.ndim != 1 or steps.size < 2:
            raise ValueError("a schedule needs at least two nodes")
        if not np.all(np.diff(steps) < 0):
            raise ValueError("schedule must be strictly decreasing")
        if steps[-1] < 0:
            raise ValueError("schedule must end at t >= 0")
        object.__setattr__(self, "steps", steps)

    @property
    def k(self) -> int:
        return self.steps.size - 1

    def __len__(self) -> int:
        return self.steps.size


def karras_nodes(n: int, t_max: float, t_min: float, rho: float = 7.0) -> np.ndarray:
    """``n`` rho-warped nodes from ``t_max`` down to ``t_min`` inclusive."""
    if n < 1:
        raise ValueError("need at least one node")
    if n == 1:
        return np.array([t_max], dtype=np.float64)
    ramp = np.linspace(0.0, 1.0, n)
    hi = t_max ** (1.0 / rho)
    lo = t_min ** (1.0 / rho)
    nodes = (hi + ramp * (lo - hi)) ** rho
    # pin the ends exactly; the power round trip drifts by an ulp or two
    nodes[0], nodes[-1] = t_max, t_min
    return nodes


def karras_schedule(k: int, cfg: BridgeConfig, rho: float = 7.0) -> TimestepSchedule:
    """Schedule for ``k`` solver steps: ``k`` evaluation nodes then 0.

    The evaluation nodes run from ``cfg.t_upper`` to ``cfg.sigma_min``; for
    ``k == 1`` the single node is ``cfg.t_upper``.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    nodes = karras_nodes(k, cfg.t_upper, cfg.sigma_min, rho)
    return TimestepSchedule(np.append(nodes, 0.0), rho=rho)


def sample_training_time(rng: np.random.Generator, cfg: BridgeConfig, size=None):
    """Uniform draw on ``[sigma_min, (1 - delta) sigma_max]``."""
    return rng.uniform(cfg.sigma_min, cfg.t_upper, size=size)
