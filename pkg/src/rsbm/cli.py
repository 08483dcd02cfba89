"""``rsbm`` command line: generate | train | sample | ablate | verify.

Training options resolve as command-line flag > ``--config`` JSON file >
built-in defaults (:class:`rsbm.experiments.ExperimentConfig`).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, oracle
from .experiments import (PRIOR_ALIASES, SWEEP_NAMES, ExperimentConfig, Fitted, fit, generate,
                          run_sweep, write_rows)
from .model import TARGET_KINDS, TrainingDivergedError
from .sampler import SOLVERS
from .toy import ToyTask, evaluate, generate_dataset, load_csv, save_csv

log = logging.getLogger("rsbm")

VELOCITY_FILE = "velocity.rsbm"
PRIOR_FILE = "prior.rsbm"
LOSS_FILE = "loss_trace.csv"

SHAPE_ALIASES = {"star": "star_patrol", "star_patrol": "star_patrol",
                 "figure8": "figure8", "fig8": "figure8"}

# flag name -> ExperimentConfig field
_TRAIN_FLAGS = {"epsilon": "epsilon", "target": "target", "prior": "prior", "epochs": "epochs",
                "lr": "lr", "batch": "batch", "prior_epochs": "prior_epochs",
                "perturb_scale": "perturb_scale", "delta": "delta", "hide_phase": "hide_phase"}


class UsageError(Exception):
    pass


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return value


def _add_train_flags(p):
    g = p.add_argument_group("training configuration (flag > --config > default)")
    g.add_argument("--epsilon", type=float, help="rectification strength in (0, 1] (default 0.5)")
    g.add_argument("--target", choices=TARGET_KINDS, help="prediction head (default v)")
    g.add_argument("--prior", choices=sorted(PRIOR_ALIASES), help="prior for a_T (default learned)")
    g.add_argument("--epochs", type=_nonneg_int, help="velocity training epochs (default 30)")
    g.add_argument("--lr", type=float, help="velocity learning rate (default 1e-4)")
    g.add_argument("--batch", type=_positive_int, help="batch size (default 256)")
    g.add_argument("--prior-epochs", type=_nonneg_int, help="learned-prior epochs (default 200)")
    g.add_argument("--perturb-scale", type=float, help="std of the perturbed_gt prior (default 1)")
    g.add_argument("--delta", type=float, help="relative upper time clamp (default 1e-3)")
    g.add_argument("--hide-phase", dest="hide_phase", action="store_true", default=None,
                   help="drop the start phase from the context (default)")
    g.add_argument("--show-phase", dest="hide_phase", action="store_false",
                   help="include the start phase in the context")
    g.add_argument("--config", type=Path, help="JSON file of training options")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rsbm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a toy trajectory dataset as CSV")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--shapes", default="star,figure8", help="comma list of star, figure8")
    p.add_argument("--noise", type=float, default=0.05, help="waypoint jitter std")
    p.add_argument("--horizon", type=_positive_int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("data.csv"))

    p = sub.add_parser("train", help="train the prior (if learned) and the velocity model")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, default=Path("run"))
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p)

    p = sub.add_parser("sample", help="generate trajectories from checkpoints and score them")
    p.add_argument("--data", type=Path, required=True, help="evaluation CSV (ground truth and context)")
    p.add_argument("--ckpt-dir", type=Path, default=Path("run"))
    p.add_argument("--k", type=_positive_int, default=3)
    p.add_argument("--solver", choices=SOLVERS, default="heun")
    p.add_argument("--n-eval", type=_positive_int, default=None, help="score only the first N rows")
    p.add_argument("--epsilon", type=float, help="assert the checkpoint was trained at this epsilon")
    p.add_argument("--target", choices=TARGET_KINDS, help="assert the checkpoint's prediction head")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None, help="predicted trajectories CSV")
    p.add_argument("--metrics", type=Path, default=None, help="metrics JSON (default: stdout)")

    p = sub.add_parser("ablate", help="run an ablation sweep into a long-format CSV")
    p.add_argument("--sweep", required=True, help="one of " + ", ".join(SWEEP_NAMES))
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--n-test", type=_positive_int, default=200, help="rows held out at the end of the file")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out", type=Path, default=Path("sweep.csv"))
    _add_train_flags(p)

    p = sub.add_parser("verify", help="run the model-free numerical checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", type=Path, default=None, help="write the JSON report here")
    p.add_argument("--perturb-kernel", type=float, default=0.0,
                   help="inject a known error into the kernel derivative (negative control)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    values = ExperimentConfig().to_dict()
    if getattr(args, "config", None) is not None:
        try:
            from_file = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(from_file, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
        values.update(from_file)
    for flag, name in _TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[name] = value
    try:
        return ExperimentConfig.from_dict(values)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load_data(path: Path, hide_phase: bool):
    if not path.exists():
        raise UsageError(f"dataset not found: {path}")
    return load_csv(path, hide_phase=hide_phase)


# -- commands ------------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    names = [s.strip() for s in args.shapes.split(",") if s.strip()]
    try:
        shapes = [SHAPE_ALIASES[s] for s in names]
    except KeyError as exc:
        raise UsageError(f"unknown shape {exc.args[0]!r}; expected some of {sorted(SHAPE_ALIASES)}") from None
    tasks = [ToyTask(shape=s, noise=args.noise) for s in shapes]
    ds = generate_dataset(args.n, tasks, np.random.default_rng(args.seed), horizon=args.horizon)
    save_csv(ds, args.out)
    log.info("wrote %d trajectories to %s", len(ds), args.out)
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    ds = _load_data(args.data, cfg.hide_phase)
    fitted = fit(ds, cfg, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"config": cfg.to_dict(), "seed": args.seed, "data": str(args.data)}
    checkpoint.save_velocity(out / VELOCITY_FILE, fitted.model, extra)
    checkpoint.save_prior(out / PRIOR_FILE, fitted.kind, fitted.learned, extra)
    with open(out / LOSS_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "epoch", "loss"])
        if fitted.learned is not None:
            for i, v in enumerate(fitted.learned.loss_trace):
                w.writerow(["prior", i, repr(float(v))])
        for i, v in enumerate(fitted.loss_trace):
            w.writerow(["velocity", i, repr(float(v))])
    log.info("checkpoints written to %s", out)
    return 0


def load_fitted(ckpt_dir: Path) -> tuple[Fitted, dict]:
    vpath, ppath = Path(ckpt_dir) / VELOCITY_FILE, Path(ckpt_dir) / PRIOR_FILE
    for path in (vpath, ppath):
        if not path.exists():
            raise UsageError(f"checkpoint not found: {path}")
    model, extra = checkpoint.load_velocity(vpath)
    kind, learned, pextra = checkpoint.load_prior(ppath)
    if pextra.get("config") != extra.get("config"):
        raise checkpoint.CheckpointError(f"{vpath} and {ppath} come from different training runs")
    cfg = ExperimentConfig.from_dict(extra["config"])
    return Fitted(cfg, model, kind, learned, []), extra


def cmd_sample(args) -> int:
    fitted, extra = load_fitted(args.ckpt_dir)
    model = fitted.model
    if args.epsilon is not None and args.epsilon != model.cfg.epsilon:
        raise checkpoint.CheckpointError(
            f"checkpoint was trained at epsilon={model.cfg.epsilon:g}, --epsilon {args.epsilon:g} requested")
    if args.target is not None and args.target != model.target:
        raise checkpoint.CheckpointError(
            f"checkpoint has a {model.target!r} head, --target {args.target} requested")
    ds = _load_data(args.data, fitted.config.hide_phase)
    if args.n_eval is not None:
        ds = ds.subset(np.arange(min(args.n_eval, len(ds))))
    pred, _, nfe = generate(model, fitted.kind, fitted.learned, ds, args.k, args.solver, args.seed)
    rep = evaluate(pred, ds.a0, nfe)
    metrics = dict(rep.summary(), solver=args.solver, k=args.k, seed=args.seed,
                   config=fitted.config.to_dict())
    if args.out is not None:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index"] + [f"{a}{j}" for j in range(ds.horizon) for a in "xy"])
            for i, row in enumerate(pred.reshape(len(ds), -1)):
                w.writerow([i] + [repr(float(v)) for v in row])
    text = json.dumps(metrics, indent=2, sort_keys=True)
    if args.metrics is not None:
        Path(args.metrics).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_ablate(args) -> int:
    if args.sweep not in SWEEP_NAMES:
        raise UsageError(f"unknown sweep {args.sweep!r}; expected one of {', '.join(SWEEP_NAMES)}")
    base = resolve_config(args)
    ds = _load_data(args.data, base.hide_phase)
    if not 0 < args.n_test < len(ds):
        raise UsageError(f"--n-test must be in (0, {len(ds)})")
    train_ds, test_ds = ds.split(args.n_test)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    rows = run_sweep(args.sweep, train_ds, test_ds, base, seeds, args.workers)
    write_rows(rows, args.out)
    log.info("wrote %d rows to %s", len(rows), args.out)
    return 0


def cmd_verify(args) -> int:
    rep = oracle.run_report(seed=args.seed, perturb_kernel=args.perturb_kernel)
    text = oracle.dumps(rep)
    if args.json is not None:
        Path(args.json).write_text(text + "\n")
    for c in rep["checks"]:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}: measured {c['measured']:.6g}, "
              f"expected {c['expected']:.6g}, tol {c['tolerance']:.3g}")
    print("all checks pass" if rep["all_pass"] else "SOME CHECKS FAILED")
    return 0 if rep["all_pass"] else 1


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "sample": cmd_sample,
            "ablate": cmd_ablate, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))  # exits with status 2
    except (checkpoint.CheckpointError, TrainingDivergedError, FloatingPointError) as exc:
        print(f"rsbm {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
