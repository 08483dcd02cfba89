"""Train / evaluate pipeline and the ablation sweeps behind ``rsbm ablate``."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .bridge import UPPER_CLAMP, BridgeConfig
from .model import TrainState, VelocityModel, train
from .nn import AdamW
from .prior import LearnedPrior, PriorKind, make_train_sampler, sample_prior, train_prior
from .sampler import SamplerConfig, integrate
from .toy import Dataset, EvalReport, evaluate

log = logging.getLogger(__name__)

#: command-line spelling -> internal prior variant
PRIOR_ALIASES = {"gaussian": "gaussian", "perturbed": "perturbed_gt",
                 "perturbed_gt": "perturbed_gt", "learned": "learned"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that defines one trained configuration.

    Defaults are the reference settings: eps = 0.5, velocity head, learned
    prior, AdamW at lr 1e-4 with batch 256 for 30 epochs.
    """

    epsilon: float = 0.5
    target: str = "v"
    prior: str = "learned"
    epochs: int = 30
    lr: float = 1e-4
    batch: int = 256
    weight_decay: float = 1e-4
    prior_epochs: int = 200
    prior_lr: float = 1e-3
    perturb_scale: float = 1.0
    sigma_max: float = 10.0
    sigma_min: float = 0.002
    delta: float = UPPER_CLAMP
    posterior_prior: bool = True
    hide_phase: bool = True

    def __post_init__(self):
        if self.prior not in PRIOR_ALIASES:
            raise ValueError(f"unknown prior {self.prior!r}; expected one of {sorted(PRIOR_ALIASES)}")
        object.__setattr__(self, "prior", PRIOR_ALIASES[self.prior])
        if self.epochs < 0 or self.prior_epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch < 1:
            raise ValueError("batch must be positive")

    @property
    def bridge(self) -> BridgeConfig:
        return BridgeConfig(sigma_max=self.sigma_max, sigma_min=self.sigma_min,
                            epsilon=self.epsilon, delta=self.delta)

    @property
    def prior_kind(self) -> PriorKind:
        return PriorKind(self.prior, gaussian_scale=self.sigma_max, perturb_scale=self.perturb_scale)

    def label(self) -> str:
        return f"eps={self.epsilon:g},target={self.target},prior={self.prior}"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Fitted:
    config: ExperimentConfig
    model: VelocityModel
    kind: PriorKind
    learned: LearnedPrior | None
    loss_trace: list


def fit_prior(ds: Dataset, cfg: ExperimentConfig, seed: int) -> LearnedPrior:
    rng = np.random.default_rng([seed, 1])
    lp = LearnedPrior(horizon=ds.horizon, context_dim=ds.context.shape[1]).init(rng)
    return train_prior(lp, ds.context, ds.a0, cfg.prior_epochs, rng, lr=cfg.prior_lr,
                       batch_size=cfg.batch)


def fit(ds: Dataset, cfg: ExperimentConfig, seed: int, learned: LearnedPrior | None = None) -> Fitted:
    """Train the prior (when learned and not supplied) then the velocity model."""
    kind = cfg.prior_kind
    if kind.variant == "learned" and learned is None:
        learned = fit_prior(ds, cfg, seed)
    rng = np.random.default_rng([seed, 2])
    model = VelocityModel(cfg.bridge, horizon=ds.horizon, context_dim=ds.context.shape[1],
                          target=cfg.target).init(rng)
    state = TrainState(model, AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay), batch_size=cfg.batch)
    sampler = make_train_sampler(kind, learned, posterior=cfg.posterior_prior, horizon=ds.horizon)
    train(state, ds.a0, ds.context, sampler, cfg.epochs, rng)
    return Fitted(cfg, model, kind, learned if kind.variant == "learned" else None, state.loss_trace)


def draw_prior(fitted_kind: PriorKind, learned, ds: Dataset, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 3])
    return sample_prior(fitted_kind, ds.context, ds.a0, rng, learned=learned, horizon=ds.horizon)


def generate(model: VelocityModel, kind: PriorKind, learned, ds: Dataset, k: int,
             solver: str = "heun", seed: int = 0, aT=None):
    """Sample one trajectory per row of ``ds``; returns ``(pred, aT, nfe)``."""
    if aT is None:
        aT = draw_prior(kind, learned, ds, seed)
    pred, nfe = integrate(model, aT, ds.context, model.cfg, SamplerConfig(solver, k))
    return pred, aT, nfe


def assess(fitted: Fitted, test: Dataset, k: int, solver: str = "heun", seed: int = 0,
           aT=None) -> EvalReport:
    pred, _, nfe = generate(fitted.model, fitted.kind, fitted.learned, test, k, solver, seed, aT)
    return evaluate(pred, test.a0, nfe)


# -- sweeps ------------------------------------------------------------------

SWEEP_NAMES = ("epsilon", "target", "solver", "prior")
EPSILON_GRID = (0.1, 0.3, 0.5, 0.7, 1.0)
EPSILON_KS = (1, 3, 5, 10)


def sweep_cells(name: str, base: ExperimentConfig):
    """``[(config, [(solver, k), ...]), ...]`` for one named sweep."""
    if name == "epsilon":
        return [(replace(base, epsilon=e), [("heun", k) for k in EPSILON_KS]) for e in EPSILON_GRID]
    if name == "target":
        return [(replace(base, target=t), [("heun", 3)]) for t in ("v", "x0", "eps")]
    if name == "solver":
        evals = [("euler", 5), ("heun", 3), ("euler", 10), ("heun", 5), ("euler", 19), ("heun", 10)]
        return [(base, evals)]
    if name == "prior":
        return [(replace(base, prior="gaussian", epsilon=1.0), [("heun", 3)]),
                (replace(base, prior="gaussian", epsilon=0.5), [("heun", 3)]),
                (replace(base, prior="learned", epsilon=1.0), [("heun", 3)]),
                (replace(base, prior="learned", epsilon=0.5), [("heun", 3)]),
                (replace(base, prior="perturbed_gt", epsilon=0.5), [("heun", 3)])]
    raise ValueError(f"unknown sweep {name!r}; expected one of {SWEEP_NAMES}")


ROW_FIELDS = ("sweep", "config", "epsilon", "target", "prior", "seed", "solver", "k", "nfe",
              "mse", "cos_sim", "fde")


def _run_cell(args):
    name, cfg, evals, train_ds, test_ds, seed = args
    fitted = fit(train_ds, cfg, seed)
    aT = draw_prior(fitted.kind, fitted.learned, test_ds, seed)
    rows = []
    for solver, k in evals:
        rep = assess(fitted, test_ds, k, solver, seed, aT=aT)
        rows.append({"sweep": name, "config": cfg.label(), "epsilon": cfg.epsilon,
                     "target": cfg.target, "prior": cfg.prior, "seed": seed, "solver": solver,
                     "k": k, "nfe": rep.nfe, "mse": rep.mse, "cos_sim": rep.cos_sim, "fde": rep.fde})
    log.info("%s seed %d done", cfg.label(), seed)
    return rows


def run_sweep(name: str, train_ds: Dataset, test_ds: Dataset, base: ExperimentConfig,
              seeds=(0, 1, 2), workers: int = 1) -> list[dict]:
    """Long-format rows, ordered by config then seed regardless of ``workers``."""
    jobs = [(name, cfg, evals, train_ds, test_ds, seed)
            for cfg, evals in sweep_cells(name, base) for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    return [row for rows in results for row in rows]


def write_rows(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ROW_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
