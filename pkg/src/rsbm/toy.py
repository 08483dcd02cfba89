"""Synthetic conditional trajectory families and open-loop metrics.

Flattening is waypoint-major everywhere: ``x0, y0, x1, y1, ...``, which is
what ``reshape(-1)`` of an ``(H, 2)`` array gives.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SHAPES = ("star_patrol", "figure8")
CONTEXT_DIM = 8


def _draw(value, rng):
    if isinstance(value, (tuple, list)):
        lo, hi = value
        return float(lo) if lo == hi else float(rng.uniform(lo, hi))
    return float(value)


@dataclass(frozen=True)
class ToyTask:
    """A shape family with pose parameters.

    ``scale``, ``rotation`` and ``phase`` are either fixed floats or
    ``(lo, hi)`` ranges sampled uniformly per trajectory. ``noise`` is the
    std of i.i.d. Gaussian waypoint jitter.
    """

    shape: str = "figure8"
    scale: float | tuple = (1.5, 3.0)
    rotation: float | tuple = (-0.5, 0.5)
    phase: float | tuple = (-0.3, 0.3)
    noise: float = 0.05

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if self.noise < 0:
            raise ValueError("noise level must be nonnegative")
        lo = self.scale[0] if isinstance(self.scale, (tuple, list)) else self.scale
        if lo <= 0:
            raise ValueError("scale must be positive")


def _star_vertices() -> np.ndarray:
    # pentagram: visit every second vertex of a regular pentagon, closed
    ang = np.pi / 2 + np.arange(6) * (4 * np.pi / 5)
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


_STAR = _star_vertices()
_STAR_CUM = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(_STAR, axis=0), axis=1))])


def star_points(u: np.ndarray) -> np.ndarray:
    """Points at perimeter fractions ``u`` (mod 1) along the unit pentagram."""
    arc = np.mod(u, 1.0) * _STAR_CUM[-1]
    seg = np.clip(np.searchsorted(_STAR_CUM, arc, side="right") - 1, 0, 4)
    frac = (arc - _STAR_CUM[seg]) / (_STAR_CUM[seg + 1] - _STAR_CUM[seg])
    return _STAR[seg] + frac[:, None] * (_STAR[seg + 1] - _STAR[seg])


def shape_waypoints(shape: str, scale: float, rotation: float, phase: float, horizon: int = 8):
    """Noise-free ``(H, 2)`` waypoints for one pose."""
    j = np.arange(horizon)
    if shape == "figure8":
        tau = phase + 2 * np.pi * j / horizon
        pts = np.stack([np.sin(tau), np.sin(tau) * np.cos(tau)], axis=1)
    elif shape == "star_patrol":
        pts = star_points(phase / (2 * np.pi) + j / horizon)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    c, s = np.cos(rotation), np.sin(rotation)
    rot = np.array([[c, -s], [s, c]])
    return scale * pts @ rot.T


def make_context(shape_id, scale, rotation, phase, noise, hide_phase=False) -> np.ndarray:
    """``[one-hot(2), scale, cos rot, sin rot, cos phase, sin phase, noise]``."""
    shape_id = np.asarray(shape_id)
    n = shape_id.shape[0]
    ctx = np.zeros((n, CONTEXT_DIM))
    ctx[np.arange(n), shape_id] = 1.0
    ctx[:, 2] = scale
    ctx[:, 3] = np.cos(rotation)
    ctx[:, 4] = np.sin(rotation)
    if not hide_phase:
        ctx[:, 5] = np.cos(phase)
        ctx[:, 6] = np.sin(phase)
    ctx[:, 7] = noise
    return ctx


@dataclass
class Dataset:
    a0: np.ndarray          # (N, H, 2)
    shape_id: np.ndarray    # (N,)
    params: np.ndarray      # (N, 4): scale, rotation, phase, noise
    hide_phase: bool = False
    context: np.ndarray = field(init=False)

    def __post_init__(self):
        self.a0 = np.asarray(self.a0, dtype=np.float64)
        self.shape_id = np.asarray(self.shape_id, dtype=np.int64)
        self.params = np.asarray(self.params, dtype=np.float64)
        p = self.params
        self.context = make_context(self.shape_id, p[:, 0], p[:, 1], p[:, 2], p[:, 3],
                                    hide_phase=self.hide_phase)

    def __len__(self):
        return self.a0.shape[0]

    @property
    def horizon(self) -> int:
        return self.a0.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.a0[idx], self.shape_id[idx], self.params[idx], self.hide_phase)

    def split(self, n_test: int) -> tuple["Dataset", "Dataset"]:
        """Last ``n_test`` rows are held out."""
        n = len(self)
        if not 0 < n_test < n:
            raise ValueError(f"cannot hold out {n_test} of {n} samples")
        return self.subset(np.arange(n - n_test)), self.subset(np.arange(n - n_test, n))


def generate_dataset(n: int, tasks, rng: np.random.Generator, horizon: int = 8,
                     hide_phase: bool = False) -> Dataset:
    """Draw ``n`` trajectories, choosing a task uniformly for each one."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    tasks = list(tasks)
    if not tasks:
        raise ValueError("need at least one task")
    a0 = np.empty((n, horizon, 2))
    shape_id = np.empty(n, dtype=np.int64)
    params = np.empty((n, 4))
    for i in range(n):
        task = tasks[rng.integers(len(tasks))] if len(tasks) > 1 else tasks[0]
        scale, rot, phase = _draw(task.scale, rng), _draw(task.rotation, rng), _draw(task.phase, rng)
        pts = shape_waypoints(task.shape, scale, rot, phase, horizon)
        if task.noise > 0:
            pts = pts + task.noise * rng.standard_normal(pts.shape)
        a0[i] = pts
        shape_id[i] = SHAPES.index(task.shape)
        params[i] = (scale, rot, phase, task.noise)
    return Dataset(a0, shape_id, params, hide_phase)


def default_tasks(shapes=SHAPES, noise: float = 0.05) -> list[ToyTask]:
    return [ToyTask(shape=s, noise=noise) for s in shapes]


# -- CSV -----------------------------------------------------------------

def csv_header(horizon: int = 8) -> list[str]:
    cols = ["shape", "scale", "rotation", "phase", "noise"]
    for j in range(horizon):
        cols += [f"x{j}", f"y{j}"]
    return cols


def _fmt(x: float) -> str:
    return repr(float(x))


def save_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(ds.horizon))
        for i in range(len(ds)):
            row = [SHAPES[ds.shape_id[i]]] + [_fmt(v) for v in ds.params[i]]
            row += [_fmt(v) for v in ds.a0[i].reshape(-1)]
            w.writerow(row)


def load_csv(path, hide_phase: bool = False) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if header[:5] != csv_header(0) or (len(header) - 5) % 2:
        raise ValueError(f"{path}: unexpected header {header[:6]}...")
    horizon = (len(header) - 5) // 2
    if header != csv_header(horizon):
        raise ValueError(f"{path}: unexpected header")
    if not body:
        raise ValueError(f"{path}: no samples")
    shape_id = np.array([SHAPES.index(r[0]) for r in body])
    params = np.array([[float(v) for v in r[1:5]] for r in body])
    a0 = np.array([[float(v) for v in r[5:]] for r in body]).reshape(-1, horizon, 2)
    return Dataset(a0, shape_id, params, hide_phase)


# -- metrics -------------------------------------------------------------

def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def mse(pred, gt):
    """Mean squared error over the ``2H`` components (per trajectory)."""
    pred, gt = _pair(pred, gt)
    return np.mean((pred - gt) ** 2, axis=(-2, -1))


def cos_sim(pred, gt):
    """Cosine similarity of the flattened trajectories."""
    pred, gt = _pair(pred, gt)
    p = pred.reshape(pred.shape[:-2] + (-1,))
    g = gt.reshape(gt.shape[:-2] + (-1,))
    gnorm = np.linalg.norm(g, axis=-1)
    if np.any(gnorm == 0):
        raise ValueError("cosine similarity undefined for an all-zero ground truth")
    pnorm = np.linalg.norm(p, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.sum(p * g, axis=-1) / (pnorm * gnorm)
    out = np.where(pnorm == 0, 0.0, out)
    return np.clip(out, -1.0, 1.0)


def fde(pred, gt):
    """Euclidean distance between final waypoints."""
    pred, gt = _pair(pred, gt)
    return np.linalg.norm(pred[..., -1, :] - gt[..., -1, :], axis=-1)


@dataclass
class EvalReport:
    mse: float
    cos_sim: float
    fde: float
    nfe: int
    records: list = field(default_factory=list)

    def summary(self) -> dict:
        return {"mse": self.mse, "cos_sim": self.cos_sim, "fde": self.fde, "nfe": self.nfe,
                "n": len(self.records)}


def evaluate(pred, gt, nfe: int) -> EvalReport:
    m, cs, fd = mse(pred, gt), cos_sim(pred, gt), fde(pred, gt)
    m, cs, fd = np.atleast_1d(m), np.atleast_1d(cs), np.atleast_1d(fd)
    records = [{"index": i, "mse": float(m[i]), "cos_sim": float(cs[i]), "fde": float(fd[i])}
               for i in range(m.size)]
    return EvalReport(float(m.mean()), float(cs.mean()), float(fd.mean()), int(nfe), records)
