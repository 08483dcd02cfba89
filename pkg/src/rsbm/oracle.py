"""Numerical checks of the bridge identities that need no trained model.

Every expected value here comes from a reference written independently of
``bridge.py``: the log-derivative by complex-step differentiation of a
separately coded std, the KL by a direct diagonal-Gaussian sum, the target
variance by Monte Carlo. Each check returns a list of :class:`Check` rows
that serialise to ``{name, measured, expected, tolerance, pass}``.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import bridge
from .bridge import BridgeConfig
from .model import VelocityModel, cfm_loss_and_grad, to_velocity
from .sampler import AnalyticField, SamplerConfig, integrate, nfe_of
from .schedules import karras_nodes

DLOG_EPSILONS = (0.01, 0.1, 0.5, 1.0)
VELVAR_S = (0.1, 0.25, 0.75)
VELVAR_EPSILONS = (0.25, 0.5, 1.0)


@dataclass
class Check:
    name: str
    measured: float
    expected: float
    tolerance: float
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = bool(d.pop("passed"))
        d["measured"] = float(d["measured"])
        d["expected"] = float(d["expected"])
        d["tolerance"] = float(d["tolerance"])
        return d


# -- independent references ---------------------------------------------

def reference_std(t, sigma_max: float, epsilon: float):
    """Kernel std written out directly; accepts complex ``t``."""
    return np.sqrt(epsilon * t ** 2 * (1.0 - t ** 2 / sigma_max ** 2))


def complex_step_dlog(std_fn: Callable, t, h: float = 1e-30):
    """``d/dt log std(t)`` by complex-step differentiation (no cancellation)."""
    t = np.asarray(t, dtype=np.float64)
    return np.imag(np.log(std_fn(t + 1j * h))) / h


def diag_gaussian_kl(mean_p, var_p, mean_q, var_q) -> float:
    """``KL(N(mean_p, diag var_p) || N(mean_q, diag var_q))`` summed over dims."""
    mean_p, var_p = np.asarray(mean_p, float), np.asarray(var_p, float)
    mean_q, var_q = np.asarray(mean_q, float), np.asarray(var_q, float)
    return float(0.5 * np.sum(var_p / var_q + (mean_q - mean_p) ** 2 / var_q - 1.0
                              + np.log(var_q) - np.log(var_p)))


# -- the log-derivative of the bridge std does not depend on epsilon ----

def dlog_grid(cfg: BridgeConfig, n: int = 100) -> np.ndarray:
    return np.linspace(cfg.sigma_min, 0.99 * cfg.sigma_max, n)


def check_dlog_sigma(cfg: BridgeConfig = BridgeConfig(), epsilons=DLOG_EPSILONS, ts=None,
                   dlog_fn: Callable | None = None, tol: float = 1e-12) -> list[Check]:
    """Relative spread across ``epsilons`` of ``dlog_fn(t, cfg)`` on ``ts``.

    ``dlog_fn`` defaults to :func:`bridge.dlog_sigma_dt`. A second row
    compares it against the complex-step derivative of :func:`reference_std`.
    """
    dlog_fn = dlog_fn or bridge.dlog_sigma_dt
    ts = dlog_grid(cfg) if ts is None else np.asarray(ts, dtype=np.float64)
    vals = np.array([np.asarray(dlog_fn(ts, cfg.replace(epsilon=e)), dtype=np.float64)
                     for e in epsilons])
    scale = np.maximum(np.abs(vals).max(axis=0), 1e-300)
    spread = float(np.max((vals.max(axis=0) - vals.min(axis=0)) / scale))

    ref = np.array([complex_step_dlog(lambda z, e=e: reference_std(z, cfg.sigma_max, e), ts)
                    for e in epsilons])
    # the reference is itself exact only to rounding; compare where it is not ~0
    mask = np.abs(ref) > 1e-8
    rel = float(np.max(np.abs(vals[mask] - ref[mask]) / np.abs(ref[mask])))
    return [
        Check("dlog_eps_spread", spread, 0.0, tol, spread < tol,
              f"{len(epsilons)} epsilons x {ts.size} times"),
        Check("dlog_vs_complex_step", rel, 0.0, 1e-10, rel < 1e-10,
              "library log-derivative against complex-step reference"),
    ]


def perturbed_dlog(p: float) -> Callable:
    """A deliberately wrong log-derivative, for negative controls.

    Corresponds to the std ``bridge_std * (1 + p * eps * t)``, whose
    log-derivative picks up the epsilon-dependent term ``p eps / (1 + p eps t)``.
    """
    def fn(t, cfg):
        t = np.asarray(t, dtype=np.float64)
        return np.asarray(bridge.dlog_sigma_dt(t, cfg)) + p * cfg.epsilon / (1.0 + p * cfg.epsilon * t)
    return fn


# -- velocity variance -------------------------------------------------

def _t_of_s(s, cfg):
    return cfg.sigma_max * np.sqrt(s)


def velocity_variance_expected(s: float, epsilon: float) -> float:
    return epsilon * (1.0 - 2.0 * s) ** 2 / (1.0 - s)


def check_velocity_variance_mc(cfg: BridgeConfig = BridgeConfig(), s_values=VELVAR_S, epsilons=VELVAR_EPSILONS,
                   n: int = 100_000, seed: int = 0, tol: float = 0.03,
                   horizon: int = 8) -> list[Check]:
    """Monte-Carlo per-component variance of the target velocity.

    The same standard-normal draws are reused across epsilon for a given
    ``s``, so the epsilon ratio is a paired comparison.
    """
    rng = np.random.default_rng(seed)
    a0 = rng.normal(size=(horizon, 2))
    aT = a0 + rng.normal(size=(horizon, 2))
    out = []
    var_at = {}
    for s in s_values:
        t = float(_t_of_s(s, cfg))
        noise = rng.standard_normal((n, horizon, 2))
        for e in epsilons:
            c = cfg.replace(epsilon=e)
            a0b = np.broadcast_to(a0, noise.shape)
            aTb = np.broadcast_to(aT, noise.shape)
            sample = bridge.sample_bridge(a0b, aTb, t, c, noise=noise)
            v = bridge.target_velocity(sample, a0b, aTb, c)
            emp = float(np.mean(np.var(v, axis=0, ddof=1)))
            exp = velocity_variance_expected(s, e)
            var_at[(s, e)] = emp
            if exp < 1e-12:
                ok = emp < 1e-3
                out.append(Check(f"velvar_s{s}_eps{e}", emp, exp, 1e-3, ok, "absolute"))
            else:
                rel = abs(emp - exp) / exp
                out.append(Check(f"velvar_s{s}_eps{e}", emp, exp, tol, rel < tol,
                                 f"relative error {rel:.4f}"))
    if (0.25, 0.5) in var_at and (0.25, 1.0) in var_at:
        ratio = var_at[(0.25, 0.5)] / var_at[(0.25, 1.0)]
        out.append(Check("velvar_ratio_eps0.5_over_eps1", ratio, 0.5, tol,
                         abs(ratio - 0.5) / 0.5 < tol, "s = 0.25"))
    return out


# -- KL cost ---------------------------------------------------------------

def check_kl(epsilons=(1.0, 0.5, 0.25, 0.1), Ds=(1, 2, 16, 64), seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for e in epsilons:
        for D in Ds:
            var = rng.uniform(0.1, 5.0, size=D)
            mean = rng.normal(size=D)
            ref = diag_gaussian_kl(mean, e * var, mean, var)
            worst = max(worst, abs(bridge.kl_rectified(e, D) - ref))
    vals = [bridge.kl_rectified(e, 16) for e in sorted(epsilons, reverse=True)]
    monotone = all(b > a for a, b in zip(vals, vals[1:])) and min(vals) >= 0.0
    headline = bridge.kl_rectified(0.5, 16)
    return [
        Check("kl_vs_diag_gaussian", worst, 0.0, 1e-10, worst < 1e-10,
              f"{len(epsilons)} epsilons x {len(Ds)} dims"),
        Check("kl_eps0.5_D16", headline, 1.545, 0.01, abs(headline - 1.545) <= 0.01),
        Check("kl_monotone_nonneg", float(monotone), 1.0, 0.0, monotone,
              "D=16, eps " + ", ".join(f"{e:g}" for e in sorted(epsilons, reverse=True))),
    ]


# -- boundary pinning ------------------------------------------------------

def check_pinning(cfg: BridgeConfig = BridgeConfig(), epsilons=(0.01, 0.1, 0.25, 0.5, 0.75, 1.0),
                  n: int = 10_000, seed: int = 0, horizon: int = 8) -> list[Check]:
    ends = [bridge.bridge_std(t, cfg.replace(epsilon=e)) for e in epsilons
            for t in (0.0, cfg.sigma_max)]
    worst_end = float(max(ends))
    rng = np.random.default_rng(seed)
    a0 = rng.normal(size=(n, horizon, 2))
    aT = rng.normal(scale=cfg.sigma_max, size=(n, horizon, 2))
    sample = bridge.sample_bridge(a0, aT, cfg.sigma_min, cfg, rng=rng)
    bound = 6.0 * bridge.bridge_std(cfg.sigma_min, cfg)
    # the mean sits s_min |aT - a0| away from a0; it counts against the bound
    dev = float(np.max(np.abs(sample.a_t - a0)))
    return [
        Check("pinning_std_endpoints", worst_end, 0.0, 0.0, worst_end == 0.0,
              f"{len(epsilons)} epsilons"),
        Check("pinning_sigma_min_6std", dev, bound, 0.0, dev <= bound, f"{n} draws"),
    ]


# -- solver order on the analytic field ------------------------------------

def _window_integrate(field: AnalyticField, a_start, ts, solver):
    a = np.asarray(a_start, dtype=np.float64).copy()
    for t, t_next in zip(ts[:-1], ts[1:]):
        dt = t_next - t
        d1 = field.velocity(a, t)
        if solver == "heun":
            d2 = field.velocity(a + d1 * dt, t_next)
            a = a + 0.5 * (d1 + d2) * dt
        else:
            a = a + d1 * dt
    return a


def convergence_errors(solver: str, ks, cfg: BridgeConfig = BridgeConfig(), seed: int = 0,
                       window=(0.9, 0.05), rho: float = 7.0, horizon: int = 8) -> np.ndarray:
    """Global error of ``k``-step integration over an interior time window.

    Starts at ``window[0] * sigma_max`` from the prior endpoint and compares
    with the closed-form trajectory at ``window[1] * sigma_max``. The window
    avoids the last leg into ``t = 0``, which collapses every state onto
    ``a0`` and hides the solver's order.
    """
    rng = np.random.default_rng(seed)
    a0 = rng.normal(size=(horizon, 2))
    aT = 3.0 * rng.normal(size=(horizon, 2))
    field = AnalyticField(a0, aT, cfg)
    t_hi, t_lo = window[0] * cfg.sigma_max, window[1] * cfg.sigma_max
    exact = field.exact(t_lo, t_hi, aT)
    scale = np.max(np.abs(aT - a0))
    errs = []
    for k in ks:
        ts = karras_nodes(k + 1, t_hi, t_lo, rho)
        a = _window_integrate(field, aT, ts, solver)
        errs.append(np.max(np.abs(a - exact)) / scale)
    return np.array(errs)


def loglog_slope(ks, errs) -> float:
    return float(-np.polyfit(np.log(np.asarray(ks, float)), np.log(np.asarray(errs, float)), 1)[0])


def endpoint_error(solver: str, k: int, cfg: BridgeConfig = BridgeConfig(), seed: int = 0,
                   horizon: int = 8) -> float:
    """Relative max error of the full sampler (prior endpoint to ``t = 0``)."""
    rng = np.random.default_rng(seed)
    a0 = rng.normal(size=(horizon, 2))
    aT = 3.0 * rng.normal(size=(horizon, 2))
    field = AnalyticField(a0, aT, cfg)
    a, _ = integrate(field, aT, None, cfg, SamplerConfig(solver, k))
    return float(np.max(np.abs(a - a0)) / np.max(np.abs(aT - a0)))


def check_solver_order(cfg: BridgeConfig = BridgeConfig(), seed: int = 0,
                       heun_ks=(3, 6, 12, 24), euler_ks=(5, 10, 20, 40)) -> list[Check]:
    eh = convergence_errors("heun", heun_ks, cfg, seed)
    ee = convergence_errors("euler", euler_ks, cfg, seed)
    sh, se = loglog_slope(heun_ks, eh), loglog_slope(euler_ks, ee)
    h3, e5 = endpoint_error("heun", 3, cfg, seed), endpoint_error("euler", 5, cfg, seed)
    k50 = endpoint_error("heun", 50, cfg, seed)
    return [
        Check("solver_heun_slope", sh, 2.0, 0.3, abs(sh - 2.0) <= 0.3,
              "k " + ",".join(map(str, heun_ks))),
        Check("solver_euler_slope", se, 1.0, 0.3, abs(se - 1.0) <= 0.3,
              "k " + ",".join(map(str, euler_ks))),
        Check("solver_matched_nfe5_heun_le_euler", h3, e5, 0.0, h3 <= e5,
              "expected column holds the Euler k=5 error"),
        Check("solver_transport_k50", k50, 0.0, 1e-3, k50 < 1e-3, "heun, relative"),
    ]


# -- NFE accounting ----------------------------------------------------------

class _CountingField:
    def __init__(self):
        self.calls = 0

    def velocity(self, a_t, t, c=None, aT=None):
        self.calls += 1
        return np.zeros_like(a_t)


def check_nfe(cfg: BridgeConfig = BridgeConfig(), ks=(1, 3, 5, 10)) -> list[Check]:
    out = []
    aT = np.ones((8, 2))
    for solver in ("heun", "euler"):
        for k in ks:
            field = _CountingField()
            sc = SamplerConfig(solver, k)
            _, nfe = integrate(field, aT, None, cfg, sc)
            expected = 2 * k - 1 if solver == "heun" else k
            ok = field.calls == nfe == sc.nfe_counter == nfe_of(solver, k) == expected
            out.append(Check(f"nfe_{solver}_k{k}", field.calls, expected, 0.0, ok))
    return out


# -- prediction-target round trips -----------------------------------------

def check_round_trips(cfg: BridgeConfig = BridgeConfig(), n: int = 1000, seed: int = 0,
                      tol: float = 1e-10) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst = {"eps": 0.0, "x0": 0.0}
    for _ in range(n):
        c = cfg.replace(epsilon=float(rng.uniform(0.01, 1.0)))
        t = float(rng.uniform(c.sigma_min, c.t_upper))
        a0 = rng.normal(size=(8, 2)) * rng.uniform(0.1, 3.0)
        aT = rng.normal(size=(8, 2)) * rng.uniform(0.1, 10.0)
        sample = bridge.sample_bridge(a0, aT, t, c, rng=rng)
        v = bridge.target_velocity(sample, a0, aT, c)
        scale = max(1.0, float(np.max(np.abs(v))))
        for kind, head in (("eps", sample.noise), ("x0", a0)):
            err = np.max(np.abs(to_velocity(head, sample.a_t, aT, t, c, kind) - v)) / scale
            worst[kind] = max(worst[kind], float(err))
    return [Check(f"round_trip_{k}", w, 0.0, tol, w < tol, f"{n} cases, scaled max error")
            for k, w in worst.items()]


# -- gradient check ----------------------------------------------------------

def gradient_check(target: str = "v", seed: int = 0, h: float = 1e-4, n_probe: int = 60,
                   cfg: BridgeConfig = BridgeConfig()) -> float:
    """Max relative error of the analytic CFM gradient against central
    differences, on a downsized network. Components with |g| < 1e-8 are skipped."""
    rng = np.random.default_rng(seed)
    model = VelocityModel(cfg, horizon=2, context_dim=3, hidden=(6, 5), cond_hidden=4,
                          n_freqs=2, target=target).init(rng)
    # the zero-initialised head would leave most gradients trivially zero
    model.params += 0.3 * rng.normal(size=model.params.size)
    B = 5
    a0 = rng.normal(size=(B, 2, 2))
    aT = rng.normal(size=(B, 2, 2))
    c = rng.normal(size=(B, 3))
    t = rng.uniform(cfg.sigma_min, cfg.t_upper, size=B)
    noise = rng.normal(size=(B, 2, 2))

    def loss_at(theta):
        return cfm_loss_and_grad(model, a0, aT, c, t=t, noise=noise, params=theta)

    _, grad = loss_at(model.params)
    idx = rng.choice(model.params.size, size=min(n_probe, model.params.size), replace=False)
    worst = 0.0
    for i in idx:
        if abs(grad[i]) < 1e-8:
            continue
        e = np.zeros_like(model.params)
        e[i] = h
        fd = (loss_at(model.params + e)[0] - loss_at(model.params - e)[0]) / (2 * h)
        worst = max(worst, abs(fd - grad[i]) / max(abs(fd), abs(grad[i])))
    return worst


def check_gradients(seed: int = 0, tol: float = 1e-3) -> list[Check]:
    out = []
    for target in ("v", "x0", "eps"):
        err = gradient_check(target, seed)
        out.append(Check(f"gradient_{target}", err, 0.0, tol, err < tol, "central differences, h=1e-4"))
    return out


# -- error decomposition with a trained model -------------------------------

def check_error_decomposition(model, a0, aT, c, ks=(1, 2, 3, 5, 10, 20, 40),
                              cfg: BridgeConfig | None = None) -> dict:
    """Endpoint MSE against ``k`` for the analytic field and for ``model``.

    The analytic field isolates discretisation error; the trained model adds
    an approximation floor that does not shrink with ``k``.
    """
    cfg = cfg or model.cfg
    field = AnalyticField(a0, aT, cfg)
    oracle, learned = [], []
    for k in ks:
        pa, _ = integrate(field, aT, c, cfg, SamplerConfig("heun", k))
        pm, _ = integrate(model, aT, c, cfg, SamplerConfig("heun", k))
        oracle.append(float(np.mean((pa - a0) ** 2)))
        learned.append(float(np.mean((pm - a0) ** 2)))
    tail = max(2, len(ks) // 3)
    window = convergence_errors("heun", (3, 6, 12, 24), cfg)
    return {
        "k": list(ks),
        "oracle_mse": oracle,
        "model_mse": learned,
        "oracle_window_slope": loglog_slope((3, 6, 12, 24), window),
        "model_floor": float(np.mean(learned[-tail:])),
        "model_tail_slope": loglog_slope(ks[-tail:], learned[-tail:]),
    }


# -- suite -------------------------------------------------------------------

def run_all(cfg: BridgeConfig = BridgeConfig(), seed: int = 0,
            perturb_kernel: float = 0.0) -> list[Check]:
    """Every model-free check. ``perturb_kernel`` injects a known bug into the
    log-derivative fed to the epsilon-independence check (negative control)."""
    dlog_fn = perturbed_dlog(perturb_kernel) if perturb_kernel else None
    checks = []
    for fn in (lambda: check_dlog_sigma(cfg, dlog_fn=dlog_fn),
               lambda: check_velocity_variance_mc(cfg, seed=seed),
               lambda: check_kl(seed=seed),
               lambda: check_pinning(cfg, seed=seed),
               lambda: check_solver_order(cfg, seed=seed),
               lambda: check_nfe(cfg),
               lambda: check_round_trips(cfg, seed=seed),
               lambda: check_gradients(seed=seed)):
        checks.extend(fn())
    return checks


def report(checks: list[Check], elapsed: float | None = None) -> dict:
    out = {"checks": [c.to_dict() for c in checks], "all_pass": all(c.passed for c in checks)}
    if elapsed is not None:
        out["elapsed_s"] = elapsed
    return out


def run_report(cfg: BridgeConfig = BridgeConfig(), seed: int = 0, perturb_kernel: float = 0.0) -> dict:
    t0 = time.perf_counter()
    checks = run_all(cfg, seed, perturb_kernel)
    return report(checks, time.perf_counter() - t0)


def dumps(rep: dict) -> str:
    return json.dumps(rep, indent=2, sort_keys=True)
