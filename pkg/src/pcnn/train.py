"""Run configuration, training loop, evaluation and inference helpers."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import Augmentation, DatasetManifest, augment, input_features
from .nn import Adam, Network, cosine_loss, load_checkpoint, save_checkpoint, softmax_cross_entropy

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    arch: str = "classification"
    data: str = "data"
    out_dir: str = "run"
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3
    decay_rate: float = 0.7
    decay_every: int = 20
    sigma_scale: float | None = None
    spacing_factor: float = 2.0
    cutoff_factor: float = 4.0
    augment: bool = True
    scale_low: float = 0.66
    scale_high: float = 1.5
    translate: float = 0.2
    rotate: bool = False
    indicator_only: bool = False
    seed: int = 0
    precision: str = "f32"
    threads: int = 1
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.arch not in ("classification", "normals"):
            raise ValueError(f"unknown architecture {self.arch!r}")
        for name in ("epochs", "batch_size", "decay_every", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.spacing_factor <= 0 or self.cutoff_factor <= 0:
            raise ValueError("lr, spacing_factor and cutoff_factor must be positive")
        if self.sigma_scale is not None and self.sigma_scale <= 0:
            raise ValueError("sigma_scale must be positive")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be f32 or f64")
        Augmentation(self.scale_low, self.scale_high, self.translate, self.rotate)

    @classmethod
    def load(cls, path) -> "RunConfig":
        raw = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
        cfg = cls(**raw)
        base = Path(path).parent
        if not Path(cfg.data).is_absolute():
            cfg.data = str(base / cfg.data)
        if not Path(cfg.out_dir).is_absolute():
            cfg.out_dir = str(base / cfg.out_dir)
        return cfg

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")

    def network_hyper(self, in_points: int) -> dict:
        hyper = dict(self.hyper)
        hyper.setdefault("in_points", in_points)
        hyper["in_channels"] = 1 if self.indicator_only else 4
        hyper.setdefault("spacing_factor", self.spacing_factor)
        hyper.setdefault("cutoff_factor", self.cutoff_factor)
        if self.sigma_scale is not None:
            hyper["sigma_scale"] = self.sigma_scale
        return hyper


def _features(clouds, indicator_only: bool) -> np.ndarray:
    return np.stack([input_features(p, indicator_only) for p in clouds])


class Trainer:
    """Mini-batch training of one network on a manifest; all randomness flows from ``cfg.seed``."""

    def __init__(self, cfg: RunConfig, manifest: DatasetManifest | None = None):
        self.cfg = cfg
        self.manifest = manifest or DatasetManifest.read(cfg.data)
        self.train_pts, self.train_lab, self.train_nrm = self.manifest.load("train")
        self.test_pts, self.test_lab, self.test_nrm = self.manifest.load("test")
        if not self.train_pts:
            raise ValueError("training split is empty")
        if cfg.arch == "normals" and any(n is None for n in self.train_nrm + self.test_nrm):
            raise ValueError("normal estimation needs points files with normal columns")
        in_points = self.train_pts[0].shape[0]
        hyper = cfg.network_hyper(in_points)
        if cfg.arch == "classification":
            hyper.setdefault("classes", len(self.manifest.classes))
        self.net = Network(cfg.arch, hyper, seed=cfg.seed, precision=cfg.precision, threads=cfg.threads)
        self.opt = Adam(cfg.lr, decay_rate=cfg.decay_rate, decay_every=cfg.decay_every)
        self.rng = np.random.default_rng([cfg.seed, 2])
        self.aug = Augmentation(cfg.scale_low, cfg.scale_high, cfg.translate, cfg.rotate)
        self._eval_plans = None

    def _loss(self, out, idx, labels, normals):
        if self.cfg.arch == "classification":
            loss, grad = softmax_cross_entropy(out, labels[idx])
            metric = float(np.mean(np.argmax(out, axis=1) == labels[idx]))
        else:
            target = np.stack([normals[i] for i in idx])
            loss, grad = cosine_loss(out, target)
            metric = loss
        return loss, metric, grad

    def train_epoch(self, epoch: int) -> tuple[float, float]:
        cfg = self.cfg
        self.opt.set_epoch(epoch)
        order = self.rng.permutation(len(self.train_pts))
        losses, metrics, weights = [], [], []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            clouds = [self.train_pts[i] for i in idx]
            normals = [self.train_nrm[i] for i in idx]
            if cfg.augment and cfg.arch == "normals":
                pairs = [augment(p, self.aug, self.rng, n) for p, n in zip(clouds, normals)]
                clouds, normals = [p for p, _ in pairs], [n for _, n in pairs]
            elif cfg.augment:
                clouds = [augment(p, self.aug, self.rng) for p in clouds]
            starts = self.rng.integers(clouds[0].shape[0], size=len(clouds))
            plans = self.net.plan(clouds, starts, self.rng)
            out, tape = self.net.forward(_features(clouds, cfg.indicator_only), plans, train=True)
            loss, metric, grad = self._loss(out, np.arange(len(idx)), self.train_lab[idx], normals)
            self.net.zero_grad()
            self.net.backward(grad, tape)
            new = self.opt.step(self.net.named_params(), self.net.named_grads())
            for name, val in new.items():
                self.net.set_param(name, val)
            losses.append(loss)
            metrics.append(metric)
            weights.append(len(idx))
        return float(np.average(losses, weights=weights)), float(np.average(metrics, weights=weights))

    def evaluate(self, split: str = "test") -> tuple[float, float]:
        if split == "test":
            if self._eval_plans is None:
                self._eval_plans = self.net.plan(self.test_pts)
            return evaluate(self.net, self.test_pts, self.test_lab, self.test_nrm,
                            self.cfg.indicator_only, plans=self._eval_plans)
        return evaluate(self.net, self.train_pts, self.train_lab, self.train_nrm, self.cfg.indicator_only)

    def run(self, log_path=None, checkpoint_path=None) -> list[tuple[int, str, float, float]]:
        rows = []
        for epoch in range(self.cfg.epochs):
            t0 = time.perf_counter()
            tr_loss, tr_metric = self.train_epoch(epoch)
            te_loss, te_metric = self.evaluate("test")
            rows += [(epoch, "train", tr_loss, tr_metric), (epoch, "test", te_loss, te_metric)]
            log.info("epoch %d train %.4f/%.4f test %.4f/%.4f (%.1fs)", epoch, tr_loss, tr_metric,
                     te_loss, te_metric, time.perf_counter() - t0)
        if log_path is not None:
            write_log(log_path, rows)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, self.net, self.opt)
        return rows


def write_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "split", "loss", "metric"])
        for epoch, split, loss, metric in rows:
            w.writerow([epoch, split, repr(float(loss)), repr(float(metric))])


def predict(net: Network, clouds, indicator_only: bool = False, plans=None, batch_size: int = 16) -> np.ndarray:
    """Eval-mode outputs: logits ``(B, C)`` or raw normal vectors ``(B, I, 3)``."""
    outs = []
    for lo in range(0, len(clouds), batch_size):
        chunk = clouds[lo:lo + batch_size]
        p = plans[lo:lo + batch_size] if plans is not None else net.plan(chunk)
        out, _ = net.forward(_features(chunk, indicator_only), p, train=False)
        outs.append(out)
    return np.concatenate(outs)


def evaluate(net: Network, clouds, labels, normals, indicator_only=False, plans=None) -> tuple[float, float]:
    """``(loss, metric)``: accuracy for classification, mean cosine distance for normals."""
    if not clouds:
        return float("nan"), float("nan")
    out = predict(net, clouds, indicator_only, plans)
    if net.arch == "classification":
        loss, _ = softmax_cross_entropy(out, labels)
        return loss, float(np.mean(np.argmax(out, axis=1) == labels))
    loss, _ = cosine_loss(out, np.stack(normals))
    return loss, loss


def subsample(clouds, count: int, seed: int = 0, normals=None):
    """Random ``count``-point subsets, one independent draw per cloud."""
    rng = np.random.default_rng(seed)
    out_p, out_n = [], []
    for k, p in enumerate(clouds):
        idx = np.sort(rng.choice(p.shape[0], size=count, replace=False))
        out_p.append(p[idx])
        if normals is not None:
            out_n.append(normals[k][idx])
    return (out_p, out_n) if normals is not None else out_p


def robustness_sweep(net: Network, clouds, labels, counts, seed: int = 0, indicator_only=False):
    """Accuracy of a trained classifier on sparser random subsets of the test clouds."""
    res = {}
    for k in counts:
        sub = subsample(clouds, k, seed) if k < clouds[0].shape[0] else clouds
        res[k] = evaluate(net, sub, labels, None, indicator_only)[1]
    return res


def load_model(path) -> Network:
    return load_checkpoint(path)
