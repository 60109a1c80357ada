"""Desk-scale training presets and the slow checks built on them."""

from __future__ import annotations

import filecmp
import tempfile
import time
from pathlib import Path

import numpy as np

from .checks import CheckResult
from .data import gen_synthetic
from .train import RunConfig, Trainer, evaluate, subsample

# Four-class shape recognition at 512 points. Inputs are the constant
# indicator only; random rotations stand in for anisotropic scaling, which
# would erase the cube/cylinder distinction at this data size.
DESK_CLASSIFICATION = dict(
    arch="classification", epochs=30, batch_size=4, lr=3e-3, decay_every=10,
    augment=True, rotate=True, scale_low=1.0, scale_high=1.0, translate=0.0,
    indicator_only=True, spacing_factor=4.0, seed=0, precision="f32", threads=1,
    hyper=dict(channels=[64, 128, 256], dense=[128, 64], dropout=0.2),
)
DESK_CLASSIFICATION_DATA = dict(classes=("sphere", "cube", "torus", "cylinder"), per_class=40, points=512, seed=0)

DESK_NORMALS = dict(
    arch="normals", epochs=30, batch_size=4, lr=3e-3, decay_every=20, augment=False,
    seed=0, precision="f32", threads=1,
)
DESK_NORMALS_DATA = dict(classes=("sphere", "torus"), per_class=20, points=512, seed=0, normals=True)


def train_preset(preset: dict, data: dict, workdir, **overrides):
    """Generate the dataset, train, write ``log.csv`` and ``model.ckpt``; returns ``(trainer, rows, seconds)``."""
    work = Path(workdir)
    man = gen_synthetic(work / "data", **data)
    cfg = RunConfig(**{**preset, **overrides, "data": str(work / "data"), "out_dir": str(work)})
    t0 = time.perf_counter()
    trainer = Trainer(cfg, man)
    rows = trainer.run(work / "log.csv", work / "model.ckpt")
    return trainer, rows, time.perf_counter() - t0


_cache: dict[str, tuple] = {}


def classification_run():
    if "cls" not in _cache:
        tmp = tempfile.mkdtemp(prefix="pcnn-cls-")
        _cache["cls"] = train_preset(DESK_CLASSIFICATION, DESK_CLASSIFICATION_DATA, tmp)
    return _cache["cls"]


def half_density_accuracy(trainer: Trainer, points: int = 256, seed: int = 0) -> float:
    sub = subsample(trainer.test_pts, points, seed)
    return evaluate(trainer.net, sub, trainer.test_lab, None, trainer.cfg.indicator_only)[1]


def check_classification() -> CheckResult:
    trainer, rows, secs = classification_run()
    acc = rows[-1][3]
    ok = acc >= 0.95 and secs <= 600
    return CheckResult("classification", ok, f"test accuracy {acc:.3f} after {trainer.cfg.epochs} epochs "
                       f"(>= 0.95) in {secs:.0f}s (<= 600s)")


def check_robustness() -> CheckResult:
    trainer, rows, _ = classification_run()
    full = rows[-1][3]
    half = half_density_accuracy(trainer)
    drop = full - half
    return CheckResult("robustness", drop <= 0.05, f"accuracy {full:.3f} at 512 points, {half:.3f} at 256 "
                       f"(drop {100 * drop:.1f} points, <= 5)")


def check_normals() -> CheckResult:
    with tempfile.TemporaryDirectory(prefix="pcnn-nrm-") as tmp:
        trainer, rows, secs = train_preset(DESK_NORMALS, DESK_NORMALS_DATA, tmp)
    dist = rows[-1][3]
    return CheckResult("normals", dist <= 0.1, f"held-out mean cosine distance {dist:.4f} (<= 0.1) in {secs:.0f}s")


DETERMINISM_DATA = dict(classes=("sphere", "cube", "torus", "cylinder"), per_class=5, points=128, seed=3)


def determinism_logs_identical(epochs: int = 2) -> bool:
    with tempfile.TemporaryDirectory(prefix="pcnn-det-") as tmp:
        logs = []
        for run in ("a", "b"):
            train_preset({**DESK_CLASSIFICATION, "epochs": epochs, "augment": True, "rotate": True,
                          "scale_low": 0.66, "scale_high": 1.5, "translate": 0.2}, DETERMINISM_DATA,
                         Path(tmp) / run)
            logs.append(Path(tmp) / run / "log.csv")
        return filecmp.cmp(logs[0], logs[1], shallow=False)


def check_determinism() -> CheckResult:
    same = determinism_logs_identical()
    return CheckResult("determinism", same, "two single-thread runs " + ("bit-identical" if same else "differ"))


CHECKS = {
    "classification": check_classification,
    "robustness": check_robustness,
    "normals": check_normals,
    "determinism": check_determinism,
}
