"""Numerical experiments on analytic surfaces and the exactness checks used by ``verify``.

Theory experiments sample quasi-uniform lattices whose per-point areas are
known, so the analytic weights ``w_i = area_i`` apply. The bandwidth is
``sigma = sqrt(area(S) / I)``, a spacing-proportional rule that reduces to
``I^(-1/2)`` on a unit-area surface.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .conv import KernelWeights, TranslationSet, box_conv_forward, build_q, conv_forward, default_translations
from .extension import ExtendedFunction, extend_eval, extend_gradient
from .rbf import RbfBasis, omega_analytic, omega_practical
from .shapes import Sphere, Surface, Torus

OFF_SURFACE_DISTANCE = 0.5
LADDER = (512, 2048, 8192)
OMEGA_CUTOFF_SIGMAS = 6.0


@dataclass
class ConvergenceReport:
    experiment: str
    sizes: list[int]
    metrics: dict[str, list[float]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ValueError("sizes must be strictly increasing")

    def add(self, name: str, value: float) -> None:
        self.metrics.setdefault(name, []).append(float(value))

    def decreasing(self, name: str) -> bool:
        v = self.metrics[name]
        return all(b < a for a, b in zip(v, v[1:]))

    def increasing(self, name: str) -> bool:
        v = self.metrics[name]
        return all(b > a for a, b in zip(v, v[1:]))

    def value(self, name: str, size: int) -> float:
        return self.metrics[name][self.sizes.index(size)]

    def rows(self):
        for name, vals in self.metrics.items():
            for size, val in zip(self.sizes, vals):
                yield self.experiment, size, name, val, self.seed

    def to_text(self) -> str:
        lines = [f"{self.experiment} (seed {self.seed})"]
        for name, vals in self.metrics.items():
            cells = "  ".join(f"I={s}: {v:.6g}" for s, v in zip(self.sizes, vals))
            lines.append(f"  {name}: {cells}")
        return "\n".join(lines)


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment", "I", "metric", "value", "seed"])
    for rep in reports:
        for exp, size, name, val, seed in rep.rows():
            w.writerow([exp, size, name, repr(val), seed])
    return buf.getvalue()


def surface_sigma(surface: Surface, n: int, scale: float = 1.0) -> float:
    return scale * float(np.sqrt(surface.area / n))


def _cloud(surface: Surface, n: int, rng, sampler: str):
    if sampler == "lattice":
        return surface.lattice(n, rng)
    if sampler == "random":
        return surface.sample(n, rng), np.full(n, surface.area / n)
    raise ValueError(f"unknown sampler {sampler!r}")


def _weights(points, areas, basis: RbfBasis, kind: str) -> np.ndarray:
    if kind == "analytic":
        return omega_analytic(areas)
    if kind == "practical":
        return omega_practical(points, basis, OMEGA_CUTOFF_SIGMAS * basis.sigma)
    raise ValueError(f"unknown weight kind {kind!r}")


def default_probes(surface: Surface, n: int = 200, seed: int = 0):
    """``(on, off)`` probe sets: surface samples and the same points pushed out along the normal."""
    on = surface.sample(n, np.random.default_rng([seed, 7]))
    return on, on + OFF_SURFACE_DISTANCE * surface.normal(on)


def indicator_experiment(surface: Surface, sizes=LADDER, probes=None, seed: int = 0, value: float = 1.0,
                         weights=("analytic", "practical"), sampler: str = "lattice",
                         sigma_scale: float = 1.0) -> ConvergenceReport:
    """Error of ``E_X[value * 1]`` against ``value`` on the surface and its magnitude off it."""
    on, off = probes if probes is not None else default_probes(surface, seed=seed)
    rep = ConvergenceReport(f"indicator_{surface.kind}", list(sizes), seed=seed)
    for n in sizes:
        pts, areas = _cloud(surface, n, np.random.default_rng([seed, n]), sampler)
        basis = RbfBasis.gaussian(surface_sigma(surface, n, sigma_scale))
        f = np.full((n, 1), value)
        for kind in weights:
            ext = ExtendedFunction(pts, f, _weights(pts, areas, basis, kind), basis)
            tag = "" if kind == "analytic" else "_practical"
            rep.add("on_surface_error" + tag, np.mean(np.abs(extend_eval(ext, on, "default")[:, 0] - value)))
            rep.add("off_surface_value" + tag, np.mean(np.abs(extend_eval(ext, off, "default")[:, 0])))
    return rep


def mean_curvature_experiment(surface: Surface, sizes=LADDER, seed: int = 0,
                              weights=("analytic", "practical"), sampler: str = "lattice",
                              sigma_scale: float = 1.0) -> ConvergenceReport:
    """Compare ``g = grad E_X[1]`` at the sample points with ``-H n``."""
    rep = ConvergenceReport(f"mean_curvature_{surface.kind}", list(sizes), seed=seed)
    for n in sizes:
        pts, areas = _cloud(surface, n, np.random.default_rng([seed, n]), sampler)
        basis = RbfBasis.gaussian(surface_sigma(surface, n, sigma_scale))
        normal = surface.normal(pts)
        h = surface.mean_curvature(pts)
        for kind in weights:
            ext = ExtendedFunction(pts, np.ones((n, 1)), _weights(pts, areas, basis, kind), basis)
            g = extend_gradient(ext, pts, "default")[:, 0, :]
            mag = np.linalg.norm(g, axis=1)
            inward = -np.einsum("ij,ij->i", g, normal)
            tag = "" if kind == "analytic" else "_practical"
            rep.add("mean_cosine" + tag, np.mean(inward / mag))
            rep.add("positive_fraction" + tag, np.mean(inward > 0))
            rep.add("magnitude_error" + tag, np.mean(np.abs(mag - np.abs(h)) / np.abs(h)))
    return rep


def height_function(points) -> np.ndarray:
    """A smooth, strictly positive test function."""
    return points[:, 2] + 2.0


def extension_disagreement(ext_a: ExtendedFunction, ext_b: ExtendedFunction, probes) -> float:
    """Mean relative difference ``|E_a - E_b| / |E_b|`` over ``probes``."""
    va = extend_eval(ext_a, probes, "default")
    vb = extend_eval(ext_b, probes, "default")
    return float(np.mean(np.abs(va - vb) / np.abs(vb)))


def sampling_consistency_experiment(surface: Surface, n: int = 4096, trials: int = 2, seed: int = 0,
                                    n_probes: int = 200, sampler: str = "lattice") -> dict[str, float]:
    """Disagreement between extensions built from independent samplings of one surface.

    Every trial after the first is compared with the first; the mean over
    comparisons is returned for the indicator and for :func:`height_function`.
    """
    if trials < 2:
        raise ValueError("need at least two trials")
    probes, _ = default_probes(surface, n_probes, seed)
    basis = RbfBasis.gaussian(surface_sigma(surface, n))
    exts = {"indicator": [], "height": []}
    for t in range(trials):
        pts, areas = _cloud(surface, n, np.random.default_rng([seed, n, t]), sampler)
        w = omega_analytic(areas)
        exts["indicator"].append(ExtendedFunction(pts, np.ones((n, 1)), w, basis))
        exts["height"].append(ExtendedFunction(pts, height_function(pts)[:, None], w, basis))
    return {name: float(np.mean([extension_disagreement(e[t], e[0], probes) for t in range(1, trials)]))
            for name, e in exts.items()}


def lattice_translations() -> TranslationSet:
    steps = (-1.0, 0.0, 1.0)
    return TranslationSet(np.array([(x, y, z) for z in steps for y in steps for x in steps]), "grid27")


def discrete_conv_oracle(dims, f, k) -> np.ndarray:
    """Nested-loop zero-padded convolution on a ``dims`` lattice.

    Point order is x fastest; ``out[p] = sum_l f[p - y_l] k_l``.
    """
    nx, ny, nz = dims
    out = np.zeros((nx * ny * nz, k.shape[2]))
    steps = (-1, 0, 1)
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                acc = np.zeros(k.shape[2])
                for l, (dz, dy, dx) in enumerate((a, b, c) for a in steps for b in steps for c in steps):
                    sx, sy, sz = x - dx, y - dy, z - dz
                    if 0 <= sx < nx and 0 <= sy < ny and 0 <= sz < nz:
                        acc += f[(sz * ny + sy) * nx + sx] @ k[l]
                out[(z * ny + y) * nx + x] = acc
    return out


def lattice_points(dims) -> np.ndarray:
    nx, ny, nz = dims
    z, y, x = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1).astype(np.float64)


def image_equivalence_test(grid_dims=(8, 8, 8), kernel=None, features=None, seed: int = 0,
                           tol: float = 1e-12) -> tuple[bool, float]:
    """Box-basis convolution on a lattice against :func:`discrete_conv_oracle`."""
    rng = np.random.default_rng(seed)
    pts = lattice_points(grid_dims)
    k = rng.normal(size=(27, 2, 3)) if kernel is None else np.asarray(kernel, dtype=np.float64)
    f = rng.normal(size=(pts.shape[0], k.shape[1])) if features is None else np.asarray(features, dtype=np.float64)
    got = box_conv_forward(pts, f, KernelWeights(k, lattice_translations()))
    dev = float(np.max(np.abs(got - discrete_conv_oracle(grid_dims, f, k))))
    return dev <= tol, dev


@dataclass
class EquivarianceReport:
    trials: int
    max_deviation: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tol


def _deviation(a, b) -> float:
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def conv_equivariance(points, f, k, sigma: float, perm) -> float:
    """Deviation between ``conv(pi X, pi f)`` and ``pi conv(X, f)``."""
    basis = RbfBasis.gaussian(sigma)
    trans = default_translations(sigma)

    def run(x, feats):
        w = omega_practical(x, basis, OMEGA_CUTOFF_SIGMAS * sigma)
        return conv_forward(build_q(x, x, sigma, trans), w, feats, k, basis.c)

    return _deviation(run(points[perm], f[perm]), run(points, f)[perm])


def network_equivariance(net, points, perm) -> float:
    """Deviation of a network's eval-mode output under a point permutation.

    The first pooling seed follows the original point 0 so both runs pick
    the same subsets.
    """
    from .data import input_features

    inv = np.argsort(perm)
    plan_a = net.plan([points], [0])
    plan_b = net.plan([points[perm]], [int(inv[0])])
    a, _ = net.forward(input_features(points)[None], plan_a, train=False)
    b, _ = net.forward(input_features(points[perm])[None], plan_b, train=False)
    if net.arch == "normals":
        a = a[:, perm]
    return _deviation(b, a)


def equivariance_suite(target: str = "conv", trials: int = 100, seed: int = 0, n_points: int = 64,
                       net=None, tol: float | None = None) -> EquivarianceReport:
    """Random permutations of tie-free Gaussian clouds for a bare convolution or a network."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    if target == "conv":
        tol = 1e-12 if tol is None else tol
        sigma = n_points ** -0.5
        for _ in range(trials):
            x = rng.normal(size=(n_points, 3)) * 0.5
            f = rng.normal(size=(n_points, 3))
            k = rng.normal(size=(27, 3, 4))
            worst = max(worst, conv_equivariance(x, f, k, sigma, rng.permutation(n_points)))
    elif target == "network":
        tol = 1e-10 if tol is None else tol
        if net is None:
            raise ValueError("network target needs a network")
        n_points = net.hyper.in_points
        for _ in range(trials):
            x = rng.normal(size=(n_points, 3)) * 0.5
            worst = max(worst, network_equivariance(net, x, rng.permutation(n_points)))
    else:
        raise ValueError(f"unknown target {target!r}")
    return EquivarianceReport(trials, worst, tol)


def standard_surfaces() -> dict[str, Surface]:
    return {"sphere": Sphere(1.0), "torus": Torus(1.0, 0.35)}
