"""Gaussian and box radial bases and the per-point area weights."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import as_points, radius_pairs


@dataclass(frozen=True)
class RbfBasis:
    """A radial basis with width ``sigma`` and extension constant ``c``.

    For ``kind == "box"`` the width is the half side of an axis-aligned cell.
    """

    kind: str
    sigma: float
    c: float

    def __post_init__(self):
        if self.kind not in ("gaussian", "box"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("sigma must be finite and positive")
        if not (np.isfinite(self.c) and self.c > 0):
            raise ValueError("c must be finite and positive")

    @classmethod
    def gaussian(cls, sigma: float, c: float | None = None) -> "RbfBasis":
        if c is None:
            c = 1.0 / (2.0 * np.pi * sigma * sigma) if sigma > 0 else np.nan
        return cls("gaussian", float(sigma), float(c))

    @classmethod
    def box(cls, half_width: float = 0.5, c: float = 1.0) -> "RbfBasis":
        return cls("box", float(half_width), float(c))

    def __call__(self, offsets: np.ndarray) -> np.ndarray:
        """Evaluate the basis at displacement vectors of shape ``(..., 3)``."""
        offsets = np.asarray(offsets, dtype=np.float64)
        if self.kind == "gaussian":
            r2 = np.einsum("...k,...k->...", offsets, offsets)
            return np.exp(-r2 / (2.0 * self.sigma**2))
        inside = (offsets >= -self.sigma) & (offsets < self.sigma)
        return np.all(inside, axis=-1).astype(np.float64)

    @property
    def support(self) -> float:
        """Radius beyond which the basis is exactly zero (inf for the Gaussian)."""
        return np.inf if self.kind == "gaussian" else float(np.sqrt(3.0) * self.sigma)


def sigma_rule(n_points: int, scale: float = 1.0) -> float:
    """Default width ``scale * I**-0.5``."""
    if n_points < 1:
        raise ValueError("n_points must be positive")
    return float(scale) / np.sqrt(n_points)


def gaussian_phi(r, sigma: float):
    return np.exp(-np.square(r) / (2.0 * sigma * sigma))


def normal_density_scale(sigma: float) -> float:
    """``(2 pi sigma^2)^(-3/2)``: turns ``Phi_sigma`` into a unit-mass density in 3-space."""
    return (2.0 * np.pi * sigma * sigma) ** -1.5


class GaussianConvolution(NamedTuple):
    gamma: float
    center: np.ndarray
    constant: float


def gaussian_conv_pair(alpha: float, a, beta: float, b) -> GaussianConvolution:
    """Closed form of ``Phi_alpha(|. - a|) * Phi_beta(|. - b|)`` over 3-space.

    The result is ``constant * Phi_gamma(|. - a - b|)`` with
    ``gamma = sqrt(alpha^2 + beta^2)``. Because ``Phi`` is an unnormalized
    Gaussian, ``constant = B(gamma) / (B(alpha) B(beta))`` where ``B`` is
    :func:`normal_density_scale`; this equals ``(2 pi alpha^2 beta^2 / gamma^2)^(3/2)``.
    """
    if not (alpha > 0 and beta > 0):
        raise ValueError("widths must be positive")
    gamma = float(np.hypot(alpha, beta))
    center = np.asarray(a, dtype=np.float64) + np.asarray(b, dtype=np.float64)
    constant = normal_density_scale(gamma) / (normal_density_scale(alpha) * normal_density_scale(beta))
    return GaussianConvolution(gamma, center, float(constant))


def gaussian_lipschitz_bound(sigma):
    """Global Lipschitz constant of ``r -> Phi_sigma(r)``, attained at ``r = sigma``.

    Accepts a scalar or an array of widths.
    """
    s = np.asarray(sigma, dtype=np.float64)
    if not np.all(s > 0):
        raise ValueError("sigma must be positive")
    out = 1.0 / (s * np.sqrt(np.e))
    return float(out) if out.ndim == 0 else out


def box_overlap(offset, half_width: float):
    """Volume shared by two axis-aligned cubes of side ``2 h`` whose centers differ by ``offset``."""
    if not half_width > 0:
        raise ValueError("half_width must be positive")
    overlap = np.maximum(0.0, 2.0 * half_width - np.abs(np.asarray(offset, dtype=np.float64)))
    return np.prod(overlap, axis=-1)


def basis_row_sums(points, basis: RbfBasis, cutoff: float | None = None) -> np.ndarray:
    """``sum_i' Phi(|x_i' - x_i|)`` for every point, self term included.

    Each row is summed in ascending value order, so permuting the cloud
    permutes the result bit for bit.

    With ``cutoff=None`` the sum is dense; otherwise pairs farther than
    ``cutoff`` (in world units) are dropped.
    """
    pts = as_points(points)
    n = pts.shape[0]
    if cutoff is None and basis.kind == "gaussian":
        out = np.empty(n)
        step = max(1, 2_000_000 // n)
        for lo in range(0, n, step):
            vals = basis(pts[lo:lo + step, None, :] - pts[None, :, :])
            out[lo:lo + step] = np.sort(vals, axis=1).sum(axis=1)
        return out
    radius = basis.support if cutoff is None else float(cutoff)
    qi, pi = radius_pairs(pts, pts, radius)
    vals = basis(pts[qi] - pts[pi])
    # Summing each row in sorted-value order makes the result independent of point order.
    order = np.lexsort((vals, qi))
    starts = np.searchsorted(qi[order], np.arange(n))
    return np.add.reduceat(vals[order], starts)


def omega_practical(points, basis: RbfBasis, cutoff: float | None = None) -> np.ndarray:
    """Area weights ``1 / (c * sum_i' Phi(|x_i' - x_i|))``.

    The self term keeps the denominator at least ``c``.
    """
    if basis.kind != "gaussian":
        raise ValueError("practical weights are defined for the Gaussian basis")
    return 1.0 / (basis.c * basis_row_sums(points, basis, cutoff))


def omega_analytic(area_per_point) -> np.ndarray:
    """Wrap caller supplied Voronoi cell areas as weights."""
    areas = np.array(area_per_point, dtype=np.float64).reshape(-1)
    if areas.size == 0 or not np.all(areas > 0) or not np.all(np.isfinite(areas)):
        raise ValueError("cell areas must be positive and finite")
    return areas
