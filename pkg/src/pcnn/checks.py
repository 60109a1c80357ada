"""Self-contained numerical checks with brute-force oracles, run by ``pcnn verify``.

Each check returns a :class:`CheckResult`. :func:`run_checks` includes the
slow training checks unless ``full=False``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import analysis
from .conv import TranslationSet, build_q, conv_backward, conv_forward, default_translations, q_quadrature_oracle
from .geometry import SubsetSelection, build_grid, farthest_point_sample, neighbors_within, voronoi_assign
from .nn import Network, softmax_cross_entropy
from .nn.layers import segment_max
from .rbf import RbfBasis, gaussian_conv_pair, gaussian_lipschitz_bound, gaussian_phi, omega_practical
from .shapes import Sphere, Torus


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.1f}s)"


# -- closed form of q ---------------------------------------------------------

def q_closed_form_error(trials: int = 20, seed: int = 0) -> float:
    """Worst relative error of ``build_q`` entries against quadrature."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        sigma = rng.uniform(0.05, 1.0)
        xi, xip = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
        # keep the configuration within a few bandwidths so the entry is not negligible
        yl = xip - xi + rng.normal(scale=sigma, size=3)
        q = build_q(xi[None], xip[None], sigma, TranslationSet(yl[None]), cutoff_factor=None)
        ref = q_quadrature_oracle(xi, xip, yl, sigma)
        worst = max(worst, abs(q.values[0] - ref) / abs(ref))
    return worst


def check_q_quadrature() -> CheckResult:
    err = q_closed_form_error()
    c11 = gaussian_conv_pair(1.0, np.zeros(3), 1.0, np.zeros(3)).constant
    quad = q_quadrature_oracle(np.zeros(3), np.zeros(3), np.zeros(3), 1.0)
    ok = err <= 1e-6 and abs(c11 - np.pi**1.5) <= 1e-10 and abs(c11 - quad) <= 1e-10
    return CheckResult("q-quadrature", ok, f"max rel err {err:.2e}; C(1,1) = {c11:.12f}, quadrature {quad:.12f}")


def check_c11_literal() -> CheckResult:
    c11 = gaussian_conv_pair(1.0, np.zeros(3), 1.0, np.zeros(3)).constant
    target = np.pi ** -1.5
    return CheckResult("c11-literal", abs(c11 - target) <= 1e-10,
                       f"C(1,1) = {c11:.10f} vs pi^-1.5 = {target:.10f}")


# -- Lipschitz bound ----------------------------------------------------------

def lipschitz_violations(samples: int = 10_000, seed: int = 0) -> int:
    rng = np.random.default_rng(seed)
    sigma = rng.uniform(0.01, 5.0, samples)
    r = rng.uniform(0.0, 10.0, samples) * sigma
    r2 = r + rng.uniform(0.0, 5.0, samples) * sigma
    lhs = np.abs(gaussian_phi(r2, sigma) - gaussian_phi(r, sigma))
    bound = (r2 - r) * gaussian_lipschitz_bound(sigma)
    return int(np.sum(lhs > bound * (1 + 1e-12)))


def check_lipschitz() -> CheckResult:
    n = lipschitz_violations()
    return CheckResult("lipschitz", n == 0, f"{n} violations in 10000 samples")


# -- equivariance -------------------------------------------------------------

def small_classifier(n_points: int = 64, seed: int = 0, precision: str = "f64") -> Network:
    hyper = dict(in_points=n_points, pool_points=(16, 4, 1), channels=(8, 16, 16), dense=(16,), classes=4,
                 dropout=0.0)
    return Network("classification", hyper, seed=seed, precision=precision)


def calibrated_classifier(seed: int = 0) -> Network:
    """:func:`small_classifier` after one train-mode pass, so eval-mode logits are of order one."""
    from .data import input_features

    net = small_classifier(seed=seed)
    rng = np.random.default_rng([seed, 5])
    clouds = [rng.normal(size=(net.hyper.in_points, 3)) * 0.5 for _ in range(4)]
    net.forward(np.stack([input_features(c) for c in clouds]), net.plan(clouds), train=True)
    return net


def check_equivariance(trials: int = 100) -> CheckResult:
    conv = analysis.equivariance_suite("conv", trials=trials, seed=0)
    net = analysis.equivariance_suite("network", trials=trials, seed=1, net=calibrated_classifier())
    ok = conv.passed and net.passed
    return CheckResult("equivariance", ok, f"conv {conv.max_deviation:.1e} (tol 1e-12), "
                       f"network {net.max_deviation:.1e} (tol 1e-10) over {trials} permutations")


# -- gradients ----------------------------------------------------------------

def conv_gradient_error(seed: int = 0, n: int = 12) -> float:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3)) * 0.3
    sigma = 0.25
    basis = RbfBasis.gaussian(sigma)
    q = build_q(x, x, sigma, default_translations(sigma))
    w = omega_practical(x, basis)
    f = rng.normal(size=(n, 2))
    k = rng.normal(size=(27, 2, 3))
    g = rng.normal(size=(n, 3))
    gf, gk = conv_backward(q, w, f, k, basis.c, g)

    def loss(ff, kk):
        return float(np.sum(conv_forward(q, w, ff, kk, basis.c) * g))

    worst = 0.0
    for arr, grad, which in ((f, gf, 0), (k, gk, 1)):
        num = np.zeros_like(arr)
        h = 1e-6
        for idx in np.ndindex(arr.shape):
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += h
            minus[idx] -= h
            args_p = (plus, k) if which == 0 else (f, plus)
            args_m = (minus, k) if which == 0 else (f, minus)
            num[idx] = (loss(*args_p) - loss(*args_m)) / (2 * h)
        worst = max(worst, np.linalg.norm(grad - num) / np.linalg.norm(num))
    return worst


def network_gradient_error(seed: int = 0, n: int = 16, entries: int = 6) -> float:
    """Relative error of every parameter's gradient in a 2-block network, sampled entries."""
    rng = np.random.default_rng(seed)
    hyper = dict(in_points=n, pool_points=(4, 1), channels=(4, 6), dense=(5,), classes=3, dropout=0.0)
    net = Network("classification", hyper, seed=seed, precision="f64")
    clouds = [rng.normal(size=(n, 3)) * 0.3 for _ in range(2)]
    feats = np.stack([np.concatenate([np.ones((n, 1)), c], axis=1) for c in clouds])
    labels = np.array([0, 2])
    plans = net.plan(clouds)

    def loss():
        out, _ = net.forward(feats, plans, train=True)
        return softmax_cross_entropy(out, labels)[0]

    out, tape = net.forward(feats, plans, train=True)
    _, grad = softmax_cross_entropy(out, labels)
    net.zero_grad()
    net.backward(grad, tape)
    analytic = {k: v.copy() for k, v in net.named_grads().items()}
    worst = 0.0
    h = 1e-6
    for name, param in net.named_params().items():
        flat = param.reshape(-1)
        pick = rng.choice(flat.size, size=min(entries, flat.size), replace=False)
        a = analytic[name].reshape(-1)[pick]
        num = np.empty(len(pick))
        for j, idx in enumerate(pick):
            base = flat[idx]
            flat[idx] = base + h
            net.set_param(name, flat.reshape(param.shape))
            lp = loss()
            flat[idx] = base - h
            net.set_param(name, flat.reshape(param.shape))
            lm = loss()
            flat[idx] = base
            net.set_param(name, flat.reshape(param.shape))
            num[j] = (lp - lm) / (2 * h)
        scale = max(np.linalg.norm(num), np.linalg.norm(a), 1e-8)
        worst = max(worst, np.linalg.norm(a - num) / scale)
    return worst


def check_gradients() -> CheckResult:
    conv = max(conv_gradient_error(s) for s in range(3))
    net = max(network_gradient_error(s) for s in range(2))
    ok = conv <= 1e-6 and net <= 1e-6
    return CheckResult("gradients", ok, f"conv {conv:.1e}, 2-block network {net:.1e} (tol 1e-6)")


# -- lattice reduction --------------------------------------------------------

def check_image_equivalence() -> CheckResult:
    devs = [analysis.image_equivalence_test((8, 8, 8), seed=s)[1] for s in range(3)]
    return CheckResult("image-equivalence", max(devs) <= 1e-12, f"max deviation {max(devs):.1e}")


# -- brute-force oracles ------------------------------------------------------

def fps_oracle(pts: np.ndarray, count: int, start: int) -> list[int]:
    chosen = [start]
    while len(chosen) < count:
        d = np.min([np.sum((pts - pts[c]) ** 2, axis=1) for c in chosen], axis=0)
        d[chosen] = -1.0
        chosen.append(int(np.argmax(d)))
    return chosen


def voronoi_oracle(pts: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = np.array([[np.sum((p - c) ** 2) for c in centers] for p in pts])
    return np.argmin(d, axis=1)


def neighbors_oracle(pts: np.ndarray, query: np.ndarray, radius: float) -> np.ndarray:
    return np.array([i for i, p in enumerate(pts) if np.sum((p - query) ** 2) <= radius * radius], dtype=np.int64)


def pool_oracle(values: np.ndarray, assignment: np.ndarray, n_cells: int) -> np.ndarray:
    out = np.full((n_cells, values.shape[1]), -np.inf)
    for i, cell in enumerate(assignment):
        for j in range(values.shape[1]):
            out[cell, j] = max(out[cell, j], values[i, j])
    return out


def oracle_mismatches(trials: int = 1000, seed: int = 0) -> dict[str, int]:
    rng = np.random.default_rng(seed)
    bad = {"fps": 0, "voronoi": 0, "neighbors": 0, "pool_max": 0}
    for _ in range(trials):
        n = int(rng.integers(2, 257))
        pts = rng.normal(size=(n, 3))
        count = int(rng.integers(1, min(n, 32) + 1))
        start = int(rng.integers(n))
        sel = farthest_point_sample(pts, count, start)
        if list(sel.indices) != fps_oracle(pts, count, start):
            bad["fps"] += 1
        part = voronoi_assign(pts, sel)
        centers = pts[sel.indices]
        if not np.array_equal(part.assignment, voronoi_oracle(pts, centers)):
            bad["voronoi"] += 1
        radius = float(rng.uniform(0.1, 1.5))
        grid = build_grid(pts, float(rng.uniform(0.2, 1.0)))
        query = rng.normal(size=3)
        if not np.array_equal(neighbors_within(grid, pts, query, radius), neighbors_oracle(pts, query, radius)):
            bad["neighbors"] += 1
        vals = rng.normal(size=(n, 3))
        pooled, _ = segment_max(vals, part.assignment, part.n_cells)
        if not np.array_equal(pooled, pool_oracle(vals, part.assignment, part.n_cells)):
            bad["pool_max"] += 1
    return bad


def check_oracles(trials: int = 1000) -> CheckResult:
    bad = oracle_mismatches(trials)
    detail = ", ".join(f"{k} {v}/{trials}" for k, v in bad.items())
    return CheckResult("oracles", not any(bad.values()), "mismatches " + detail)


# -- sparsity -----------------------------------------------------------------

def sparsity_differences(clouds: int = 10, n: int = 128, seed: int = 0, cutoff_factor: float = 4.0):
    """Per cloud ``(| |a| - |b| | / |b|, |a - b| / |b|)`` for truncated ``a`` and dense ``b``."""
    rng = np.random.default_rng(seed)
    res = []
    for _ in range(clouds):
        x = rng.normal(size=(n, 3))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        sigma = n ** -0.5
        basis = RbfBasis.gaussian(sigma)
        trans = default_translations(sigma)
        w = omega_practical(x, basis)
        f = rng.normal(size=(n, 4))
        k = rng.normal(size=(27, 4, 8))
        a = conv_forward(build_q(x, x, sigma, trans, cutoff_factor), w, f, k, basis.c)
        b = conv_forward(build_q(x, x, sigma, trans, None), w, f, k, basis.c)
        nb = np.linalg.norm(b)
        res.append((abs(np.linalg.norm(a) - nb) / nb, np.linalg.norm(a - b) / nb))
    return res


def check_sparsity() -> CheckResult:
    res = sparsity_differences()
    norm_diff = max(r[0] for r in res)
    full_diff = max(r[1] for r in res)
    return CheckResult("sparsity", norm_diff <= 1e-5,
                       f"max output-norm rel diff {norm_diff:.2e} (tol 1e-5); rel diff norm {full_diff:.2e}")


# -- surface experiments ------------------------------------------------------

def check_indicator() -> CheckResult:
    rep = analysis.indicator_experiment(Sphere(1.0), weights=("analytic",))
    err = rep.metrics["on_surface_error"]
    off = rep.value("off_surface_value", 8192)
    ok = rep.decreasing("on_surface_error") and off <= 1e-3
    return CheckResult("indicator", ok, "on-surface error " + ", ".join(f"{e:.2e}" for e in err)
                       + f"; off-surface {off:.1e}")


def check_curvature() -> CheckResult:
    rep = analysis.mean_curvature_experiment(Sphere(1.0), weights=("analytic",))
    cos = rep.value("mean_cosine", 8192)
    mag = rep.metrics["magnitude_error"]
    tor = analysis.mean_curvature_experiment(Torus(1.0, 0.35), sizes=(8192,), weights=("analytic",))
    frac = tor.value("positive_fraction", 8192)
    ok = cos >= 0.95 and rep.decreasing("magnitude_error") and frac >= 0.9
    return CheckResult("curvature", ok, f"sphere cosine {cos:.5f}; magnitude error "
                       + ", ".join(f"{m:.2e}" for m in mag) + f"; torus inward fraction {frac:.3f}")


def _unit_rule_scale(surface) -> float:
    # surface_sigma(surface, n, s) = s * sqrt(area / n); this s gives n ** -0.5 exactly
    return 1.0 / float(np.sqrt(surface.area))


def check_indicator_unit_rule() -> CheckResult:
    """The indicator criterion with ``sigma = I^(-1/2)`` taken literally on the unit sphere."""
    sphere = Sphere(1.0)
    rep = analysis.indicator_experiment(sphere, weights=("analytic",), sigma_scale=_unit_rule_scale(sphere))
    err = rep.metrics["on_surface_error"]
    off = rep.value("off_surface_value", 8192)
    ok = rep.decreasing("on_surface_error") and off <= 1e-3
    return CheckResult("indicator-unit-rule", ok, "on-surface error " + ", ".join(f"{e:.2e}" for e in err)
                       + f"; off-surface {off:.1e}")


def check_curvature_unit_rule() -> CheckResult:
    sphere = Sphere(1.0)
    rep = analysis.mean_curvature_experiment(sphere, weights=("analytic",), sigma_scale=_unit_rule_scale(sphere))
    cos = rep.value("mean_cosine", 8192)
    mag = rep.metrics["magnitude_error"]
    ok = cos >= 0.95 and rep.decreasing("magnitude_error")
    return CheckResult("curvature-unit-rule", ok, f"sphere cosine {cos:.5f}; magnitude error "
                       + ", ".join(f"{m:.2e}" for m in mag))


def check_consistency() -> CheckResult:
    res = analysis.sampling_consistency_experiment(Sphere(1.0), 4096, trials=2)
    ok = res["indicator"] <= 0.05
    return CheckResult("consistency", ok, f"indicator {res['indicator']:.2e}, height {res['height']:.2e} (tol 5e-2)")


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "q-quadrature": check_q_quadrature,
    "c11-literal": check_c11_literal,
    "equivariance": check_equivariance,
    "gradients": check_gradients,
    "image-equivalence": check_image_equivalence,
    "indicator": check_indicator,
    "curvature": check_curvature,
    "indicator-unit-rule": check_indicator_unit_rule,
    "curvature-unit-rule": check_curvature_unit_rule,
    "lipschitz": check_lipschitz,
    "oracles": check_oracles,
    "sparsity": check_sparsity,
    "consistency": check_consistency,
}


def run_checks(names=None, skip=(), full: bool = True, log=print) -> list[CheckResult]:
    from . import training_checks

    registry = dict(CHECKS)
    if full:
        registry.update(training_checks.CHECKS)
    names = list(registry) if names is None else list(names)
    unknown = [n for n in list(names) + list(skip) if n not in registry]
    if unknown:
        raise KeyError(f"unknown checks: {', '.join(unknown)}")
    results = []
    for name in names:
        if name in skip:
            continue
        t0 = time.perf_counter()
        res = registry[name]()
        res.seconds = time.perf_counter() - t0
        log(res.line())
        results.append(res)
    return results
