"""Points files, dataset manifests, synthetic shape datasets and augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .shapes import Box, Cylinder, Sphere, Torus, random_rotation

SHAPE_CLASSES = ("sphere", "cube", "torus", "cylinder")
MANIFEST_NAME = "manifest.txt"
MANIFEST_TAG = "PCNNMANIFEST 1"


def write_points(path, points, normals=None) -> None:
    """One ``x y z`` (optionally ``x y z nx ny nz``) row per point, round-trip exact."""
    pts = np.asarray(points, dtype=np.float64)
    rows = pts if normals is None else np.concatenate([pts, np.asarray(normals, dtype=np.float64)], axis=1)
    try:
        np.savetxt(path, rows, fmt="%.17g")
    except OSError as exc:
        raise OSError(f"cannot write points file {path}: {exc}") from exc


def read_points(path) -> tuple[np.ndarray, np.ndarray | None]:
    try:
        rows = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except OSError as exc:
        raise OSError(f"cannot read points file {path}: {exc}") from exc
    if rows.shape[1] not in (3, 6):
        raise ValueError(f"{path}: expected 3 or 6 columns, found {rows.shape[1]}")
    return rows[:, :3].copy(), (rows[:, 3:].copy() if rows.shape[1] == 6 else None)


@dataclass
class Record:
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    """Line-oriented manifest; record paths are relative to the manifest's directory."""

    classes: list[str]
    records: list[Record]
    seed: int
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        for r in self.records:
            if not 0 <= r.label < len(self.classes):
                raise ValueError(f"label {r.label} out of range for {len(self.classes)} classes")
            if r.split not in ("train", "test"):
                raise ValueError(f"unknown split {r.split!r}")

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def resolve(self, rec: Record) -> Path:
        return self.root / rec.path

    def load(self, name: str):
        """Points, labels and (possibly ``None``) normals for one split."""
        recs = self.split(name)
        pts, nrm = [], []
        for r in recs:
            p, n = read_points(self.resolve(r))
            pts.append(p)
            nrm.append(n)
        return pts, np.array([r.label for r in recs], dtype=np.int64), nrm

    def write(self, path) -> None:
        lines = [MANIFEST_TAG, f"seed {self.seed}", "classes " + " ".join(self.classes)]
        lines += [f"record {r.path} {r.label} {r.split}" for r in self.records]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        lines = path.read_text().splitlines()
        if not lines or lines[0].strip() != MANIFEST_TAG:
            raise ValueError(f"{path}: not a dataset manifest")
        seed, classes, records = 0, [], []
        for num, line in enumerate(lines[1:], start=2):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "seed" and len(parts) == 2:
                seed = int(parts[1])
            elif parts[0] == "classes":
                classes = parts[1:]
            elif parts[0] == "record" and len(parts) == 4:
                records.append(Record(parts[1], int(parts[2]), parts[3]))
            else:
                raise ValueError(f"{path}:{num}: cannot parse {line!r}")
        man = cls(classes, records, seed, path.parent)
        for r in records:
            if not man.resolve(r).is_file():
                raise FileNotFoundError(f"{path}: missing points file {r.path}")
        return man


def make_shape(kind: str, rng):
    """Random primitive of the given class, scaled so its farthest point is at distance 1."""
    if kind == "sphere":
        return Sphere(1.0)
    if kind == "cube":
        return Box((1 / np.sqrt(3.0),) * 3)
    if kind == "torus":
        ratio = rng.uniform(0.25, 0.45)
        R = 1.0 / (1.0 + ratio)
        return Torus(R, ratio * R)
    if kind == "cylinder":
        aspect = rng.uniform(0.5, 2.0)
        radius = 1.0 / np.hypot(1.0, aspect)
        return Cylinder(radius, aspect * radius)
    raise ValueError(f"unknown shape class {kind!r}")


def sample_shape(kind: str, n_points: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Area-uniform points and outward normals of a randomly rotated primitive."""
    shape = make_shape(kind, rng)
    pts = shape.sample(n_points, rng)
    nrm = shape.normal(pts)
    rot = random_rotation(rng)
    return pts @ rot.T, nrm @ rot.T


def gen_synthetic(out_dir, classes=SHAPE_CLASSES, per_class: int = 10, points: int = 512,
                  seed: int = 0, normals: bool = False, test_fraction: float = 0.2) -> DatasetManifest:
    """Write a synthetic dataset; the first 80% of each class is the training split."""
    if per_class < 2:
        raise ValueError("per_class must be at least 2")
    if points < 64:
        raise ValueError("points must be at least 64")
    classes = list(classes)
    for c in classes:
        if c not in SHAPE_CLASSES:
            raise ValueError(f"unknown shape class {c!r}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    rng = np.random.default_rng(seed)
    n_test = max(1, int(round(per_class * test_fraction)))
    records = []
    for label, kind in enumerate(classes):
        for k in range(per_class):
            pts, nrm = sample_shape(kind, points, rng)
            name = f"{kind}_{k:03d}.pts"
            write_points(out / name, pts, nrm if normals else None)
            records.append(Record(name, label, "test" if k >= per_class - n_test else "train"))
    man = DatasetManifest(classes, records, seed, out)
    man.write(out / MANIFEST_NAME)
    return man


@dataclass
class Augmentation:
    scale_low: float = 0.66
    scale_high: float = 1.5
    translate: float = 0.2
    rotate: bool = False

    def __post_init__(self):
        if not 0 < self.scale_low <= self.scale_high:
            raise ValueError("scale range must satisfy 0 < low <= high")
        if self.translate < 0:
            raise ValueError("translation range must be non-negative")


def augment(points, config: Augmentation, rng, normals=None):
    """Optional random rotation, per-axis scaling in ``[low, high]``, then a global per-axis translation.

    When ``normals`` are given they are mapped by the inverse transpose of the
    linear part, renormalized, and returned alongside the points.
    """
    pts = np.asarray(points, dtype=np.float64)
    nrm = None if normals is None else np.asarray(normals, dtype=np.float64)
    if config.rotate:
        rot = random_rotation(rng)
        pts = pts @ rot.T
        nrm = None if nrm is None else nrm @ rot.T
    scale = rng.uniform(config.scale_low, config.scale_high, 3)
    shift = rng.uniform(-config.translate, config.translate, 3)
    pts = pts * scale + shift
    if nrm is None:
        return pts
    nrm = nrm / scale
    return pts, nrm / np.linalg.norm(nrm, axis=1, keepdims=True)


def input_features(points, indicator_only: bool = False) -> np.ndarray:
    """``(1, x, y, z)`` per point, or the constant one alone."""
    pts = np.asarray(points, dtype=np.float64)
    ones = np.ones((pts.shape[0], 1))
    return ones if indicator_only else np.concatenate([ones, pts], axis=1)
