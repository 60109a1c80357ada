import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pcnn.rbf import (
    RbfBasis,
    basis_row_sums,
    box_overlap,
    gaussian_conv_pair,
    gaussian_lipschitz_bound,
    gaussian_phi,
    omega_analytic,
    omega_practical,
    sigma_rule,
)


def conv_quadrature(alpha, a, beta, b, x, nodes=64, panels=6):
    """Product Gauss-Legendre value of int Phi_alpha(|y - a|) Phi_beta(|x - y - b|) dy."""
    t, w = np.polynomial.legendre.leggauss(nodes)
    total = 1.0
    for ax in range(3):
        # both factors are Gaussians in y with centres a and x - b
        lo = min(a[ax], x[ax] - b[ax]) - 10 * max(alpha, beta)
        hi = max(a[ax], x[ax] - b[ax]) + 10 * max(alpha, beta)
        edges = np.linspace(lo, hi, panels + 1)
        acc = 0.0
        for e0, e1 in zip(edges[:-1], edges[1:]):
            y = 0.5 * (e1 - e0) * t + 0.5 * (e1 + e0)
            f = np.exp(-((y - a[ax]) ** 2) / (2 * alpha**2)) * np.exp(-((x[ax] - y - b[ax]) ** 2) / (2 * beta**2))
            acc += 0.5 * (e1 - e0) * np.sum(w * f)
        total *= acc
    return total


class TestGaussianPhi:
    def test_values(self):
        assert gaussian_phi(0.0, 0.7) == 1.0
        assert gaussian_phi(0.7, 0.7) == pytest.approx(0.606531, abs=1e-6)
        assert gaussian_phi(2.1, 0.7) == pytest.approx(0.011109, abs=1e-6)

    def test_bounded_and_decreasing(self):
        r = np.linspace(0, 5, 200)
        v = gaussian_phi(r, 1.3)
        assert np.all((v > 0) & (v <= 1))
        assert np.all(np.diff(v) < 0)


class TestBasis:
    def test_gaussian_normalization(self):
        b = RbfBasis.gaussian(0.25)
        assert b.c == pytest.approx(1 / (2 * np.pi * 0.0625))
        assert b(np.zeros(3)) == 1.0

    def test_box_is_per_axis(self):
        b = RbfBasis.box(0.5)
        assert b(np.array([0.49, -0.49, 0.2])) == 1.0
        assert b(np.array([0.5, 0.0, 0.0])) == 0.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            RbfBasis.gaussian(0.0)
        with pytest.raises(ValueError):
            RbfBasis.gaussian(1.0, c=-1.0)

    def test_sigma_rule(self):
        assert sigma_rule(1024) == pytest.approx(1 / 32)
        assert sigma_rule(100, 2.0) == pytest.approx(0.2)


class TestConvPair:
    def test_gamma_and_center(self):
        res = gaussian_conv_pair(3.0, np.array([1.0, 0, 0]), 4.0, np.array([0, 2.0, 0]))
        assert res.gamma == pytest.approx(5.0)
        assert np.allclose(res.center, [1, 2, 0])

    def test_unit_constant_matches_quadrature(self):
        res = gaussian_conv_pair(1.0, np.zeros(3), 1.0, np.zeros(3))
        quad = conv_quadrature(1.0, np.zeros(3), 1.0, np.zeros(3), np.zeros(3))
        assert res.constant == pytest.approx(np.pi**1.5, rel=1e-12)
        assert quad == pytest.approx(res.constant, rel=1e-10)

    def test_random_configs_against_quadrature(self, rng):
        for _ in range(10):
            alpha, beta = rng.uniform(0.05, 2.0, 2)
            a, b = rng.normal(size=3), rng.normal(size=3)
            res = gaussian_conv_pair(alpha, a, beta, b)
            # evaluate the convolution at the centre and at a displaced point
            for x in (a + b, a + b + rng.normal(scale=res.gamma, size=3)):
                expected = res.constant * gaussian_phi(np.linalg.norm(x - res.center), res.gamma)
                assert conv_quadrature(alpha, a, beta, b, x) == pytest.approx(expected, rel=1e-6)


class TestOmegaPractical:
    def test_single_point(self):
        b = RbfBasis.gaussian(0.3)
        assert omega_practical(np.zeros((1, 3)), b)[0] == pytest.approx(1 / b.c, rel=1e-15)

    def test_coincident_pair(self):
        b = RbfBasis.gaussian(0.3)
        assert np.allclose(omega_practical(np.zeros((2, 3)), b), 1 / (2 * b.c), rtol=1e-15)

    def test_far_pair(self):
        b = RbfBasis.gaussian(0.3)
        pts = np.array([[0.0, 0, 0], [30.0, 0, 0]])
        assert np.allclose(omega_practical(pts, b), 1 / b.c, rtol=1e-12)

    def test_exact_identity(self, rng):
        pts = rng.normal(size=(100, 3))
        b = RbfBasis.gaussian(0.4)
        w = omega_practical(pts, b)
        dense = np.exp(-((pts[:, None] - pts[None]) ** 2).sum(-1) / (2 * 0.16)).sum(1)
        assert np.max(np.abs(w * b.c * dense - 1)) <= 1e-14

    def test_permutation_exact(self, rng):
        pts = rng.normal(size=(90, 3))
        b = RbfBasis.gaussian(0.5)
        perm = rng.permutation(90)
        for cutoff in (None, 3.0):
            w = omega_practical(pts, b, cutoff)
            assert np.array_equal(omega_practical(pts[perm], b, cutoff), w[perm])

    def test_cutoff_close_to_dense(self, rng):
        pts = rng.normal(size=(80, 3))
        b = RbfBasis.gaussian(0.3)
        assert np.allclose(basis_row_sums(pts, b, 6 * 0.3), basis_row_sums(pts, b), rtol=1e-7)

    def test_box_rejected(self):
        with pytest.raises(ValueError):
            omega_practical(np.zeros((1, 3)), RbfBasis.box())


class TestOmegaAnalytic:
    def test_equal_area_sphere(self):
        w = omega_analytic(np.full(50, 4 * np.pi / 50))
        assert np.allclose(w, 4 * np.pi / 50)

    def test_passthrough(self):
        assert list(omega_analytic([1.0, 2.0, 3.0])) == [1.0, 2.0, 3.0]
        assert list(omega_analytic([4 * np.pi])) == [4 * np.pi]

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            omega_analytic([1.0, 0.0])


class TestBoxOverlap:
    def test_examples(self):
        assert box_overlap(np.zeros(3), 0.5) == 1.0
        assert box_overlap(np.array([1.0, 0, 0]), 0.5) == 0.0
        assert box_overlap(np.array([0.5, 0, 0]), 0.5) == 0.5


class TestLipschitz:
    def test_values(self):
        assert gaussian_lipschitz_bound(1.0) == pytest.approx(np.exp(-0.5))
        assert gaussian_lipschitz_bound(2.0) == pytest.approx(0.30327, abs=1e-5)

    def test_attained_at_sigma(self):
        s = 0.8
        h = 1e-7
        slope = (gaussian_phi(s - h, s) - gaussian_phi(s + h, s)) / (2 * h)
        assert slope == pytest.approx(gaussian_lipschitz_bound(s), rel=1e-6)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.01, 5.0), st.floats(0.0, 40.0), st.floats(0.0, 40.0))
    def test_bound_holds(self, sigma, r, dr):
        r1, r2 = r * sigma, (r + dr) * sigma
        gap = abs(gaussian_phi(r2, sigma) - gaussian_phi(r1, sigma))
        assert gap <= (r2 - r1) * gaussian_lipschitz_bound(sigma) * (1 + 1e-12) + 4e-16  # rounding of two exp values
