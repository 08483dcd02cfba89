"""Versioned checkpoint container.

Layout: the magic line ``RSBM1`` followed by a single JSON object holding
``kind`` (``velocity`` or ``prior``), an architecture descriptor, the bridge
config, the prediction target / prior kind, and the flat parameter vector.
Floats round-trip exactly through ``repr``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .bridge import BridgeConfig
from .model import VelocityModel
from .prior import LearnedPrior, PriorKind

MAGIC = "RSBM1"


class CheckpointError(ValueError):
    pass


def _write(path, record: dict) -> None:
    text = MAGIC + "\n" + json.dumps(record, sort_keys=True) + "\n"
    Path(path).write_text(text)


def _read(path) -> dict:
    text = Path(path).read_text()
    head, _, body = text.partition("\n")
    if head.strip() != MAGIC:
        raise CheckpointError(f"{path}: not an {MAGIC} checkpoint (header {head[:16]!r})")
    try:
        return json.loads(body)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint body: {exc}") from exc


def save_velocity(path, model: VelocityModel, extra: dict | None = None) -> None:
    _write(path, {
        "kind": "velocity",
        "architecture": model.architecture(),
        "bridge": model.cfg.to_dict(),
        "target": model.target,
        "params": model.params.tolist(),
        "extra": extra or {},
    })


def load_velocity(path) -> tuple[VelocityModel, dict]:
    rec = _read(path)
    if rec.get("kind") != "velocity":
        raise CheckpointError(f"{path}: expected a velocity checkpoint, found {rec.get('kind')!r}")
    arch = dict(rec["architecture"])
    arch["hidden"] = tuple(arch["hidden"])
    model = VelocityModel(cfg=BridgeConfig(**rec["bridge"]), target=rec["target"],
                          params=np.array(rec["params"], dtype=np.float64), **arch)
    return model, rec.get("extra", {})


def save_prior(path, kind: PriorKind, learned: LearnedPrior | None, extra: dict | None = None) -> None:
    _write(path, {
        "kind": "prior",
        "prior_kind": {"variant": kind.variant, "gaussian_scale": kind.gaussian_scale,
                       "perturb_scale": kind.perturb_scale},
        "architecture": learned.architecture() if learned is not None else None,
        "params": learned.params.tolist() if learned is not None else None,
        "extra": extra or {},
    })


def load_prior(path) -> tuple[PriorKind, LearnedPrior | None, dict]:
    rec = _read(path)
    if rec.get("kind") != "prior":
        raise CheckpointError(f"{path}: expected a prior checkpoint, found {rec.get('kind')!r}")
    kind = PriorKind(**rec["prior_kind"])
    learned = None
    if rec.get("params") is not None:
        learned = LearnedPrior(params=np.array(rec["params"], dtype=np.float64), **rec["architecture"])
    return kind, learned, rec.get("extra", {})
