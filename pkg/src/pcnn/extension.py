"""Extension of point-cloud functions to 3-space, restriction back to points,
the analytic gradient of the extension and volumetric grid export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .geometry import as_points, radius_pairs
from .rbf import RbfBasis

# Skipping sources beyond 6 sigma drops terms below exp(-18) of the peak.
DEFAULT_CUTOFF_SIGMAS = 6.0

VOLUME_MAGIC = "PCNNVOL1"


@dataclass(frozen=True)
class ExtendedFunction:
    """``E_X[f](x) = sum_i f_ij c w_i Phi(|x - x_i|)`` as an evaluable object."""

    points: np.ndarray
    features: np.ndarray
    omega: np.ndarray
    basis: RbfBasis

    def __post_init__(self):
        pts = as_points(self.points)
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim == 1:
            f = f[:, None]
        w = np.asarray(self.omega, dtype=np.float64).reshape(-1)
        if f.shape[0] != pts.shape[0] or w.shape[0] != pts.shape[0]:
            raise ValueError(
                f"inconsistent sizes: {pts.shape[0]} points, {f.shape[0]} feature rows, {w.shape[0]} weights"
            )
        if not np.all(np.isfinite(f)):
            raise ValueError("features must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "omega", w)

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    def __call__(self, queries, cutoff: float | None = None) -> np.ndarray:
        return extend_eval(self, queries, cutoff)


def _cutoff_radius(basis: RbfBasis, cutoff) -> float | None:
    if cutoff is None:
        return None if basis.kind == "gaussian" else basis.support
    if cutoff == "default":
        return DEFAULT_CUTOFF_SIGMAS * basis.sigma if basis.kind == "gaussian" else basis.support
    return float(cutoff)


def extension_matrix(points, omega, basis: RbfBasis, queries, cutoff=None) -> sp.csr_matrix:
    """Sparse ``(n_queries, I)`` matrix with entries ``c w_i Phi(|q - x_i|)``.

    Exact zeros of the Gaussian (underflow) are kept out of the pattern.
    ``cutoff`` is a world-unit radius, ``"default"`` for 6 sigma, or ``None``
    for every source point.
    """
    pts = as_points(points)
    q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    w = np.asarray(omega, dtype=np.float64).reshape(-1)
    radius = _cutoff_radius(basis, cutoff)
    if radius is None:
        qi = np.repeat(np.arange(q.shape[0]), pts.shape[0])
        pi = np.tile(np.arange(pts.shape[0]), q.shape[0])
    else:
        qi, pi = radius_pairs(q, pts, radius)
    vals = basis.c * w[pi] * basis(q[qi] - pts[pi])
    keep = vals != 0.0
    mat = sp.csr_matrix((vals[keep], (qi[keep], pi[keep])), shape=(q.shape[0], pts.shape[0]))
    mat.sort_indices()
    return mat


def extend_eval(ext: ExtendedFunction, queries, cutoff=None) -> np.ndarray:
    """Values of the extension at ``queries``, shape ``(n_queries, J)``.

    Each output row sums its terms in ascending source index.
    """
    q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    out = np.empty((q.shape[0], ext.channels))
    step = max(1, 4_000_000 // max(1, len(ext.points)))
    for lo in range(0, q.shape[0], step):
        mat = extension_matrix(ext.points, ext.omega, ext.basis, q[lo:lo + step], cutoff)
        out[lo:lo + step] = mat @ ext.features
    return out


def restrict(ext: ExtendedFunction, target, cutoff=None) -> np.ndarray:
    """Sample the extension on another cloud: restriction, or upsampling when the target is finer."""
    return extend_eval(ext, as_points(target), cutoff)


def extend_gradient(ext: ExtendedFunction, queries, cutoff=None) -> np.ndarray:
    """Spatial gradient of the extension, shape ``(n_queries, J, 3)``."""
    if ext.basis.kind != "gaussian":
        raise NotImplementedError("the box basis is not differentiable")
    q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    pts = ext.points
    radius = _cutoff_radius(ext.basis, cutoff)
    out = np.zeros((q.shape[0], ext.channels, 3))
    step = max(1, 2_000_000 // max(1, len(pts)))
    for lo in range(0, q.shape[0], step):
        qb = q[lo:lo + step]
        if radius is None:
            qi = np.repeat(np.arange(qb.shape[0]), pts.shape[0])
            pi = np.tile(np.arange(pts.shape[0]), qb.shape[0])
        else:
            qi, pi = radius_pairs(qb, pts, radius)
        diff = qb[qi] - pts[pi]
        weight = ext.basis.c * ext.omega[pi] * ext.basis(diff) / ext.basis.sigma**2
        # d/dx Phi(|x - x_i|) = -(x - x_i) / sigma^2 * Phi
        terms = -weight[:, None, None] * ext.features[pi][:, :, None] * diff[:, None, :]
        for ch in range(ext.channels):
            for ax in range(3):
                out[lo:lo + step, ch, ax] = np.bincount(qi, weights=terms[:, ch, ax], minlength=qb.shape[0])
    return out


@dataclass(frozen=True)
class VolumetricGrid:
    """Samples on a regular lattice; ``data`` has shape ``(nz, ny, nx, J)`` so x varies fastest."""

    dims: tuple[int, int, int]
    origin: np.ndarray
    spacing: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError("grid dims must be three positive integers")
        spacing = np.asarray(self.spacing, dtype=np.float64).reshape(3)
        if not np.all(spacing > 0):
            raise ValueError("grid spacing must be positive")
        data = np.asarray(self.data, dtype=np.float64)
        nx, ny, nz = dims
        if data.shape[:3] != (nz, ny, nx) or data.ndim != 4:
            raise ValueError(f"data shape {data.shape} does not match dims {dims}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[3]

    def node(self, a: int, b: int, c: int) -> np.ndarray:
        return self.data[c, b, a]


def grid_nodes(dims, origin, spacing) -> np.ndarray:
    nx, ny, nz = (int(d) for d in dims)
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    spacing = np.asarray(spacing, dtype=np.float64).reshape(3)
    c, b, a = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    idx = np.stack([a.ravel(), b.ravel(), c.ravel()], axis=1)
    return origin + idx * spacing


def sample_grid(ext: ExtendedFunction, dims, origin, spacing, cutoff="default") -> VolumetricGrid:
    nx, ny, nz = (int(d) for d in dims)
    values = extend_eval(ext, grid_nodes(dims, origin, spacing), cutoff)
    return VolumetricGrid((nx, ny, nz), origin, spacing, values.reshape(nz, ny, nx, ext.channels))


def write_volume(path, grid: VolumetricGrid) -> None:
    nx, ny, nz = grid.dims
    head = " ".join(
        [VOLUME_MAGIC, str(nx), str(ny), str(nz), str(grid.channels)]
        + [repr(float(v)) for v in grid.origin]
        + [repr(float(v)) for v in grid.spacing]
    )
    payload = np.ascontiguousarray(grid.data, dtype="<f8").tobytes()
    try:
        Path(path).write_bytes(head.encode("ascii") + b"\n" + payload)
    except OSError as exc:
        raise OSError(f"cannot write volume file {path}: {exc}") from exc


def read_volume(path) -> VolumetricGrid:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: missing header line")
    fields = raw[:nl].decode("ascii").split()
    if len(fields) != 11 or fields[0] != VOLUME_MAGIC:
        raise ValueError(f"{path}: not a {VOLUME_MAGIC} file")
    nx, ny, nz, ch = (int(v) for v in fields[1:5])
    origin = [float(v) for v in fields[5:8]]
    spacing = [float(v) for v in fields[8:11]]
    body = raw[nl + 1:]
    expected = nx * ny * nz * ch * 8
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, found {len(body)}")
    data = np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(nz, ny, nx, ch)
    return VolumetricGrid((nx, ny, nz), origin, spacing, data)


