"""Point clouds, farthest point sampling, Voronoi assignment and fixed-radius
neighbor search on a uniform spatial hash grid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

# Linear cell keys must fit in int64 with a guard cell on every side.
_MAX_CELLS_PER_AXIS = 1 << 20


@dataclass(frozen=True)
class PointCloud:
    """``I`` points in 3-space; row ``i`` is point id ``i``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (I, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, selection: "SubsetSelection") -> "PointCloud":
        return PointCloud(self.points[selection.indices])

    def permuted(self, perm) -> "PointCloud":
        return PointCloud(self.points[np.asarray(perm)])


@dataclass(frozen=True)
class SubsetSelection:
    parent_size: int
    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size > self.parent_size:
            raise ValueError("subset cannot be larger than its parent")
        if idx.size and (idx.min() < 0 or idx.max() >= self.parent_size):
            raise ValueError("subset index out of range")
        if np.unique(idx).size != idx.size:
            raise ValueError("subset indices must be distinct")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return self.indices.size


@dataclass(frozen=True)
class VoronoiPartition:
    """``assignment[i]`` is the position in the subset of the site nearest to parent point ``i``."""

    assignment: np.ndarray
    n_cells: int

    def cells(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.searchsorted(self.assignment[order], np.arange(self.n_cells + 1))
        return [order[bounds[c]:bounds[c + 1]] for c in range(self.n_cells)]


def as_points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return PointCloud(cloud).points


def farthest_point_sample(cloud, count: int, start_index: int = 0) -> SubsetSelection:
    """Greedy farthest point sampling.

    Each pick maximizes the distance to the already selected set; exact ties go
    to the lowest point index, so the result is fully deterministic.
    """
    pts = as_points(cloud)
    n = pts.shape[0]
    if not 1 <= count <= n:
        raise ValueError(f"count must be in [1, {n}], got {count}")
    if not 0 <= start_index < n:
        raise ValueError(f"start_index must be in [0, {n}), got {start_index}")
    selected = np.empty(count, dtype=np.int64)
    selected[0] = start_index
    d2 = _sq_dist_to(pts, pts[start_index])
    d2[start_index] = -1.0
    for k in range(1, count):
        nxt = int(np.argmax(d2))
        selected[k] = nxt
        np.minimum(d2, _sq_dist_to(pts, pts[nxt]), out=d2)
        d2[nxt] = -1.0
    return SubsetSelection(n, selected)


def _sq_dist_to(pts: np.ndarray, p: np.ndarray) -> np.ndarray:
    diff = pts - p
    return np.einsum("ij,ij->i", diff, diff)


def voronoi_assign(parent, subset: SubsetSelection, chunk: int = 4096) -> VoronoiPartition:
    """Assign every parent point to its nearest subset site (lowest site on ties)."""
    pts = as_points(parent)
    if subset.parent_size != pts.shape[0]:
        raise ValueError("subset was drawn from a cloud of a different size")
    sites = pts[subset.indices]
    out = np.empty(pts.shape[0], dtype=np.int64)
    # Explicit differences keep d(x, x) == 0 exactly and make ties reproducible.
    for lo in range(0, pts.shape[0], chunk):
        diff = pts[lo:lo + chunk, None, :] - sites[None, :, :]
        out[lo:lo + chunk] = np.argmin(np.einsum("ijk,ijk->ij", diff, diff), axis=1)
    return VoronoiPartition(out, len(subset))


@dataclass
class SpatialHashGrid:
    """Uniform grid over a fixed point set, bucketing points by integer cell.

    Queries with radius up to ``cell_size`` only touch the 27 surrounding cells.
    """

    points: np.ndarray
    cell_size: float
    _origin: np.ndarray = field(init=False, repr=False)
    _dims: np.ndarray = field(init=False, repr=False)
    _keys: np.ndarray = field(init=False, repr=False)
    _order: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.points = as_points(self.points)
        if not self.cell_size > 0 or not np.isfinite(self.cell_size):
            raise ValueError("cell_size must be positive and finite")
        lo = self.points.min(axis=0)
        extent = float(np.max(self.points.max(axis=0) - lo))
        # Coarsening never breaks correctness, it only grows the buckets.
        self.cell_size = max(float(self.cell_size), extent / (_MAX_CELLS_PER_AXIS - 4))
        self._origin = lo - self.cell_size
        cells = self._cells_of(self.points)
        self._dims = cells.max(axis=0) + 2
        keys = self._key(cells)
        self._order = np.argsort(keys, kind="stable")
        self._keys = keys[self._order]

    def _cells_of(self, pts: np.ndarray) -> np.ndarray:
        return np.floor((pts - self._origin) / self.cell_size).astype(np.int64)

    def _key(self, cells: np.ndarray) -> np.ndarray:
        nx, ny, _ = self._dims
        return (cells[:, 2] * ny + cells[:, 1]) * nx + cells[:, 0]

    @property
    def buckets(self) -> dict[tuple[int, int, int], np.ndarray]:
        uniq, start = np.unique(self._keys, return_index=True)
        stop = np.append(start[1:], self._keys.size)
        nx, ny, _ = self._dims
        out = {}
        for key, a, b in zip(uniq, start, stop):
            cell = (int(key % nx), int((key // nx) % ny), int(key // (nx * ny)))
            out[cell] = np.sort(self._order[a:b])
        return out

    def pairs_within(self, queries, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """All ``(query, point)`` index pairs with distance at most ``radius``.

        Pairs come out sorted by query, then point index.
        """
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        if not radius > 0:
            raise ValueError("radius must be positive")
        reach = int(np.ceil(radius / self.cell_size))
        qc = self._cells_of(q)
        q_parts, p_parts = [], []
        rng = np.arange(-reach, reach + 1)
        for dz in rng:
            for dy in rng:
                for dx in rng:
                    c = qc + np.array([dx, dy, dz])
                    ok = np.all((c >= 0) & (c < self._dims), axis=1)
                    if not ok.any():
                        continue
                    qi = np.nonzero(ok)[0]
                    keys = self._key(c[qi])
                    a = np.searchsorted(self._keys, keys, side="left")
                    b = np.searchsorted(self._keys, keys, side="right")
                    counts = b - a
                    if counts.sum() == 0:
                        continue
                    rep_q = np.repeat(qi, counts)
                    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
                    q_parts.append(rep_q)
                    p_parts.append(self._order[np.repeat(a, counts) + offs])
        if not q_parts:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty.copy()
        qi = np.concatenate(q_parts)
        pi = np.concatenate(p_parts)
        diff = q[qi] - self.points[pi]
        keep = np.einsum("ij,ij->i", diff, diff) <= radius * radius
        qi, pi = qi[keep], pi[keep]
        order = np.lexsort((pi, qi))
        return qi[order], pi[order]

    def query(self, query, radius: float) -> np.ndarray:
        _, pi = self.pairs_within(np.asarray(query, dtype=np.float64).reshape(1, 3), radius)
        return pi


def radius_pairs(queries, points, radius: float, tree: cKDTree | None = None):
    """All ``(query, point)`` pairs with ``|q - x| <= radius``, sorted by query then point.

    A k-d tree proposes candidates with a small slack; membership is then
    decided from explicit squared differences, the same test the grid and the
    brute-force oracles use.
    """
    q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    if not radius > 0:
        raise ValueError("radius must be positive")
    tree = cKDTree(pts) if tree is None else tree
    m = cKDTree(q).sparse_distance_matrix(tree, radius * (1.0 + 1e-9), output_type="ndarray")
    qi = m["i"].astype(np.int64)
    pi = m["j"].astype(np.int64)
    diff = q[qi] - pts[pi]
    keep = np.einsum("ij,ij->i", diff, diff) <= radius * radius
    qi, pi = qi[keep], pi[keep]
    order = np.lexsort((pi, qi))
    return qi[order], pi[order]


def build_grid(cloud, cell_size: float) -> SpatialHashGrid:
    return SpatialHashGrid(as_points(cloud), cell_size)


def neighbors_within(grid: SpatialHashGrid, cloud, query, radius: float) -> np.ndarray:
    """Indices ``i`` with ``|x_i - query| <= radius``, ascending."""
    pts = as_points(cloud)
    if pts is not grid.points and not np.array_equal(pts, grid.points):
        raise ValueError("grid was built over a different cloud")
    return grid.query(query, radius)
