"""Analytic surfaces with area-uniform samplers, normals and mean curvature."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def random_rotation(rng) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


class Surface:
    """Base class; subclasses provide ``area``, ``normal``, ``mean_curvature`` and samplers."""

    kind = "surface"
    area: float

    def sample(self, n: int, rng) -> np.ndarray:
        """``n`` i.i.d. area-uniform points."""
        raise NotImplementedError

    def lattice(self, n: int, rng=None) -> tuple[np.ndarray, np.ndarray]:
        """Quasi-uniform sample and the surface area owned by each point."""
        raise NotImplementedError

    def normal(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mean_curvature(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def diameter(self) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class Sphere(Surface):
    """Sphere centred at the origin. ``H = 1 / radius`` with the outward normal."""

    radius: float = 1.0
    kind = "sphere"

    @property
    def area(self) -> float:
        return 4.0 * np.pi * self.radius**2

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def sample(self, n, rng):
        # inverse CDF: z uniform on [-1, 1], azimuth uniform
        z = rng.uniform(-1.0, 1.0, n)
        phi = rng.uniform(0.0, 2.0 * np.pi, n)
        return self.radius * _from_z_phi(z, phi)

    def lattice(self, n, rng=None):
        """Spherical Fibonacci points: the same inverse CDF driven by a golden-ratio lattice.

        Each point owns an equal-area latitude stratum of area ``4 pi r^2 / n``.
        A randomly rotated copy is returned when ``rng`` is given.
        """
        k = np.arange(n)
        z = 1.0 - (2.0 * k + 1.0) / n
        phi = 2.0 * np.pi * ((k * GOLDEN) % 1.0)
        pts = _from_z_phi(z, phi)
        if rng is not None:
            pts = pts @ random_rotation(rng).T
        return self.radius * pts, np.full(n, self.area / n)

    def normal(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def mean_curvature(self, x):
        return np.full(np.asarray(x).shape[:-1], 1.0 / self.radius)


def _from_z_phi(z, phi):
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)


@dataclass(frozen=True)
class Torus(Surface):
    """Torus around the z axis with tube centre radius ``R`` and tube radius ``r``.

    Mean curvature (average of principal curvatures, outward normal) is
    ``(R + 2 r cos v) / (2 r (R + r cos v))``; it is positive everywhere when ``R > 2 r``.
    """

    R: float = 1.0
    r: float = 0.35
    kind = "torus"

    def __post_init__(self):
        if not 0 < self.r < self.R:
            raise ValueError("torus needs 0 < r < R")

    @property
    def area(self) -> float:
        return 4.0 * np.pi**2 * self.R * self.r

    @property
    def diameter(self) -> float:
        return 2.0 * (self.R + self.r)

    def _embed(self, u, v):
        ring = self.R + self.r * np.cos(v)
        return np.stack([ring * np.cos(u), ring * np.sin(u), self.r * np.sin(v)], axis=-1)

    def sample(self, n, rng):
        """Rejection sampling on the area density ``(R + r cos v) / (R + r)``."""
        out_u, out_v, have = [], [], 0
        while have < n:
            m = max(16, 2 * (n - have))
            u = rng.uniform(0.0, 2.0 * np.pi, m)
            v = rng.uniform(0.0, 2.0 * np.pi, m)
            keep = rng.uniform(0.0, 1.0, m) < (self.R + self.r * np.cos(v)) / (self.R + self.r)
            out_u.append(u[keep])
            out_v.append(v[keep])
            have += int(keep.sum())
        u = np.concatenate(out_u)[:n]
        v = np.concatenate(out_v)[:n]
        return self._embed(u, v)

    def lattice(self, n, rng=None):
        """Rings of constant tube angle with points spread in proportion to ring length.

        Rings are equally spaced in ``v``; each point owns an equal share of its ring's band area.
        """
        spacing = np.sqrt(self.area / n)
        n_rings = max(3, int(round(2.0 * np.pi * self.r / spacing)))
        dv = 2.0 * np.pi / n_rings
        phase = rng.uniform(0.0, 1.0) if rng is not None else 0.0
        v = (np.arange(n_rings) + 0.5 + phase) * dv
        length = self.R + self.r * np.cos(v)
        counts = _apportion(n, length)
        band = 2.0 * np.pi * self.r * (self.R * dv + self.r * (np.sin(v + dv / 2) - np.sin(v - dv / 2)))
        pts, areas = [], []
        for j in range(n_rings):
            shift = (j * GOLDEN + phase) % 1.0
            u = 2.0 * np.pi * (np.arange(counts[j]) + shift) / counts[j]
            pts.append(self._embed(u, np.full(counts[j], v[j])))
            areas.append(np.full(counts[j], band[j] / counts[j]))
        return np.concatenate(pts), np.concatenate(areas)

    def _angles(self, x):
        x = np.asarray(x, dtype=np.float64)
        u = np.arctan2(x[..., 1], x[..., 0])
        ring = np.hypot(x[..., 0], x[..., 1]) - self.R
        v = np.arctan2(x[..., 2], ring)
        return u, v

    def normal(self, x):
        u, v = self._angles(x)
        return np.stack([np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)], axis=-1)

    def mean_curvature(self, x):
        _, v = self._angles(x)
        return (self.R + 2.0 * self.r * np.cos(v)) / (2.0 * self.r * (self.R + self.r * np.cos(v)))


def _apportion(total: int, weights: np.ndarray) -> np.ndarray:
    """Largest-remainder split of ``total`` proportional to ``weights``, at least one each."""
    share = total * weights / weights.sum()
    counts = np.maximum(1, np.floor(share).astype(np.int64))
    rest = total - counts.sum()
    if rest > 0:
        counts[np.argsort(-(share - np.floor(share)), kind="stable")[:rest]] += 1
    elif rest < 0:
        for j in np.argsort(share - np.floor(share), kind="stable"):
            if rest == 0:
                break
            if counts[j] > 1:
                counts[j] -= 1
                rest += 1
    return counts


@dataclass(frozen=True)
class Box(Surface):
    """Surface of an axis-aligned box with half extents ``half``."""

    half: tuple[float, float, float] = (0.5, 0.5, 0.5)
    kind = "cube"

    @property
    def area(self) -> float:
        a, b, c = self.half
        return 8.0 * (a * b + b * c + a * c)

    @property
    def diameter(self) -> float:
        return 2.0 * float(np.linalg.norm(self.half))

    def sample(self, n, rng):
        h = np.asarray(self.half, dtype=np.float64)
        face_area = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
        axis = rng.choice(3, size=n, p=face_area / face_area.sum())
        side = np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)
        pts = rng.uniform(-1.0, 1.0, (n, 3)) * h
        pts[np.arange(n), axis] = side * h[axis]
        return pts

    def normal(self, x):
        x = np.asarray(x, dtype=np.float64)
        h = np.asarray(self.half)
        axis = np.argmax(np.abs(x) / h, axis=-1)
        out = np.zeros_like(x)
        idx = np.arange(x.shape[0])
        out[idx, axis] = np.sign(x[idx, axis])
        return out


@dataclass(frozen=True)
class Cylinder(Surface):
    """Closed cylinder around the z axis: lateral surface plus two caps."""

    radius: float = 0.6
    half_height: float = 0.8
    kind = "cylinder"

    @property
    def area(self) -> float:
        return 2.0 * np.pi * self.radius * (2.0 * self.half_height) + 2.0 * np.pi * self.radius**2

    @property
    def diameter(self) -> float:
        return 2.0 * float(np.hypot(self.radius, self.half_height))

    def sample(self, n, rng):
        lateral = 4.0 * np.pi * self.radius * self.half_height
        cap = np.pi * self.radius**2
        part = rng.choice(3, size=n, p=np.array([lateral, cap, cap]) / (lateral + 2 * cap))
        phi = rng.uniform(0.0, 2.0 * np.pi, n)
        rad = np.where(part == 0, self.radius, self.radius * np.sqrt(rng.uniform(size=n)))
        z = np.where(part == 0, rng.uniform(-self.half_height, self.half_height, n),
                     np.where(part == 1, self.half_height, -self.half_height))
        return np.stack([rad * np.cos(phi), rad * np.sin(phi), z], axis=-1)

    def normal(self, x):
        x = np.asarray(x, dtype=np.float64)
        rho = np.hypot(x[:, 0], x[:, 1])
        safe = np.where(rho > 0, rho, 1.0)
        on_cap = np.abs(np.abs(x[:, 2]) - self.half_height) * self.radius < np.abs(rho - self.radius) * self.half_height
        side = np.stack([x[:, 0] / safe, x[:, 1] / safe, np.zeros_like(rho)], axis=-1)
        cap = np.stack([np.zeros_like(rho), np.zeros_like(rho), np.sign(x[:, 2])], axis=-1)
        return np.where(on_cap[:, None], cap, side)
