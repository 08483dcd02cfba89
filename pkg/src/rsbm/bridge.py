"""Closed-form kernel of the epsilon-rectified bridge.

Trajectories are ``(..., H, 2)`` float64 arrays. Times may be scalars or
arrays whose shape matches the leading (batch) dimensions of the trajectory
arguments; they are broadcast over the trailing ``(H, 2)`` axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Default relative clamp below ``sigma_max`` for training times and the first
#: integration node; keeps ``dlog_sigma_dt`` away from its pole at ``s_t = 1``.
UPPER_CLAMP = 1e-3


class BridgeDomainError(ValueError):
    """Raised when a time or parameter lies outside the kernel's domain."""


class PoleError(BridgeDomainError):
    """Raised when a quantity is evaluated at (or past) a singularity."""


@dataclass(frozen=True)
class BridgeConfig:
    sigma_max: float = 10.0
    sigma_min: float = 0.002
    epsilon: float = 0.5
    delta: float = UPPER_CLAMP

    def __post_init__(self):
        if not (0.0 < self.sigma_min < self.sigma_max):
            raise BridgeDomainError(
                f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}"
            )
        if not (0.0 < self.epsilon <= 1.0):
            raise BridgeDomainError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not (0.0 < self.delta < 1.0) or (1.0 - self.delta) * self.sigma_max <= self.sigma_min:
            raise BridgeDomainError(f"delta must leave a nonempty time window, got {self.delta}")

    @property
    def t_upper(self) -> float:
        """Largest admissible training / evaluation time."""
        return (1.0 - self.delta) * self.sigma_max

    def replace(self, **changes) -> "BridgeConfig":
        values = self.to_dict()
        values.update(changes)
        return BridgeConfig(**values)

    def to_dict(self) -> dict:
        return {"sigma_max": self.sigma_max, "sigma_min": self.sigma_min,
                "epsilon": self.epsilon, "delta": self.delta}


@dataclass(frozen=True)
class BridgeSample:
    """One draw from the kernel together with every intermediate.

    ``a_t == mu_t + sigma_t * noise`` holds exactly (up to the reshape of
    ``noise`` to trajectory shape).
    """

    a_t: np.ndarray
    t: np.ndarray | float
    noise: np.ndarray
    mu_t: np.ndarray
    sigma_t: np.ndarray | float


def _as_time(t, *, lo: float, hi: float, what: str, open_lo=False, open_hi=False):
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise BridgeDomainError(f"{what}: non-finite time")
    bad_lo = (t <= lo) if open_lo else (t < lo)
    bad_hi = (t >= hi) if open_hi else (t > hi)
    if np.any(bad_lo) or np.any(bad_hi):
        lb = "(" if open_lo else "["
        rb = ")" if open_hi else "]"
        raise (PoleError if (open_lo or open_hi) else BridgeDomainError)(
            f"{what}: t outside {lb}{lo}, {hi}{rb}: {t.min()}..{t.max()}"
        )
    return t


def _expand(t: np.ndarray) -> np.ndarray | float:
    # (B,) -> (B, 1, 1) so it broadcasts against (B, H, 2).
    if t.ndim == 0:
        return float(t)
    return t[..., None, None]


def interp_coeff(t, cfg: BridgeConfig):
    """``s_t = t^2 / sigma_max^2``, the weight of the prior endpoint."""
    t = _as_time(t, lo=0.0, hi=cfg.sigma_max, what="interp_coeff")
    s = t * t / (cfg.sigma_max * cfg.sigma_max)
    return float(s) if s.ndim == 0 else s


def bridge_mean(a0, aT, t, cfg: BridgeConfig) -> np.ndarray:
    a0 = np.asarray(a0, dtype=np.float64)
    aT = np.asarray(aT, dtype=np.float64)
    if a0.shape != aT.shape:
        raise ValueError(f"shape mismatch: {a0.shape} vs {aT.shape}")
    s = _expand(np.asarray(interp_coeff(t, cfg)))
    return s * aT + (1.0 - s) * a0


def bridge_std(t, cfg: BridgeConfig):
    """Kernel standard deviation ``sqrt(eps * t^2 * (1 - s_t))``.

    Exactly zero at ``t = 0`` and ``t = sigma_max``.
    """
    t = _as_time(t, lo=0.0, hi=cfg.sigma_max, what="bridge_std")
    s = t * t / (cfg.sigma_max * cfg.sigma_max)
    var = cfg.epsilon * t * t * (1.0 - s)
    out = np.sqrt(np.maximum(var, 0.0))
    return float(out) if out.ndim == 0 else out


def dsigma_dt(t, cfg: BridgeConfig):
    """Time derivative of :func:`bridge_std`: ``sqrt(eps)(1-2s)/sqrt(1-s)``."""
    t = _as_time(t, lo=0.0, hi=cfg.sigma_max, what="dsigma_dt", open_hi=True)
    s = t * t / (cfg.sigma_max * cfg.sigma_max)
    out = np.sqrt(cfg.epsilon) * (1.0 - 2.0 * s) / np.sqrt(1.0 - s)
    return float(out) if out.ndim == 0 else out


def sample_bridge(a0, aT, t, cfg: BridgeConfig, rng: np.random.Generator | None = None,
                  noise=None) -> BridgeSample:
    """Draw ``a_t ~ N(mu_t, sigma_t^2 I)``.

    Pass ``noise`` to pin the standard-normal draw (e.g. zeros for the
    deterministic interpolant); otherwise it is drawn from ``rng``.
    """
    a0 = np.asarray(a0, dtype=np.float64)
    t_arr = _as_time(t, lo=cfg.sigma_min, hi=cfg.sigma_max, what="sample_bridge")
    mu = bridge_mean(a0, aT, t_arr, cfg)
    if noise is None:
        if rng is None:
            raise ValueError("sample_bridge needs rng when noise is not given")
        noise = rng.standard_normal(a0.shape)
    else:
        noise = np.broadcast_to(np.asarray(noise, dtype=np.float64), a0.shape).copy()
    sigma = bridge_std(t_arr, cfg)
    a_t = mu + _expand(np.asarray(sigma)) * noise
    t_out = float(t_arr) if t_arr.ndim == 0 else t_arr
    return BridgeSample(a_t=a_t, t=t_out, noise=noise, mu_t=mu, sigma_t=sigma)


def dmu_dt(a0, aT, t, cfg: BridgeConfig) -> np.ndarray:
    a0 = np.asarray(a0, dtype=np.float64)
    aT = np.asarray(aT, dtype=np.float64)
    if a0.shape != aT.shape:
        raise ValueError(f"shape mismatch: {a0.shape} vs {aT.shape}")
    t = _as_time(t, lo=0.0, hi=cfg.sigma_max, what="dmu_dt")
    return _expand(2.0 * t / (cfg.sigma_max * cfg.sigma_max)) * (aT - a0)


def dlog_sigma_dt(t, cfg: BridgeConfig):
    """Logarithmic derivative of the kernel std, ``(1-2s)/(t(1-s))``.

    The sqrt(eps) factors of ``dsigma_dt`` and ``bridge_std`` cancel, so
    ``cfg.epsilon`` is never read and the value is bitwise identical for every
    epsilon.
    """
    t = _as_time(t, lo=0.0, hi=cfg.sigma_max, what="dlog_sigma_dt", open_lo=True, open_hi=True)
    s = t * t / (cfg.sigma_max * cfg.sigma_max)
    out = (1.0 - 2.0 * s) / (t * (1.0 - s))
    return float(out) if out.ndim == 0 else out


def target_velocity(sample: BridgeSample, a0, aT, cfg: BridgeConfig) -> np.ndarray:
    """Conditional velocity ``dmu/dt + dlog(sigma)/dt * (a_t - mu_t)``."""
    g = _expand(np.asarray(dlog_sigma_dt(sample.t, cfg)))
    return dmu_dt(a0, aT, sample.t, cfg) + g * (sample.a_t - sample.mu_t)


def velocity_variance(t, cfg: BridgeConfig):
    """Per-component conditional variance ``eps (1-2s)^2 / (1-s)`` of the target."""
    t = _as_time(t, lo=0.0, hi=cfg.sigma_max, what="velocity_variance", open_hi=True)
    s = t * t / (cfg.sigma_max * cfg.sigma_max)
    out = cfg.epsilon * (1.0 - 2.0 * s) ** 2 / (1.0 - s)
    return float(out) if out.ndim == 0 else out


def kl_rectified(epsilon: float, D: int) -> float:
    """KL between the rectified and the standard (eps=1) kernel, in nats."""
    if not (0.0 < epsilon <= 1.0) or not np.isfinite(epsilon):
        raise BridgeDomainError(f"epsilon must lie in (0, 1], got {epsilon}")
    if D < 1:
        raise BridgeDomainError(f"D must be positive, got {D}")
    return 0.5 * D * (epsilon - 1.0 - np.log(epsilon))
