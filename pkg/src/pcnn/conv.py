"""Point-cloud convolution: kernel translations, the sparse q tensor built from
the closed-form Gaussian convolution, the forward contraction and its gradients."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
import scipy.sparse as sp

from .geometry import as_points, radius_pairs
from .rbf import box_overlap, gaussian_conv_pair


@dataclass(frozen=True)
class TranslationSet:
    offsets: np.ndarray
    layout_tag: str = "custom"

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 3)
        if off.shape[0] < 1 or not np.all(np.isfinite(off)):
            raise ValueError("need at least one finite translation")
        if self.layout_tag not in ("grid27", "custom", "spherical"):
            raise ValueError(f"unknown layout {self.layout_tag!r}")
        if self.layout_tag == "grid27" and off.shape[0] != 27:
            raise ValueError("grid27 layout must have 27 offsets")
        off.setflags(write=False)
        object.__setattr__(self, "offsets", off)

    def __len__(self) -> int:
        return self.offsets.shape[0]


def default_translations(sigma: float, spacing_factor: float = 2.0) -> TranslationSet:
    """27 offsets ``{-d, 0, d}^3`` with ``d = spacing_factor * sigma``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    delta = spacing_factor * sigma
    if not delta > 0:
        raise ValueError("translation spacing must be positive")
    steps = (-delta, 0.0, delta)
    # x varies fastest so that layout index l = 9 * iz + 3 * iy + ix
    offsets = [(x, y, z) for z, y, x in product(steps, steps, steps)]
    return TranslationSet(np.array(offsets), "grid27")


@dataclass(frozen=True)
class KernelWeights:
    k: np.ndarray
    translations: TranslationSet

    def __post_init__(self):
        k = np.asarray(self.k)
        if k.ndim != 3 or k.shape[0] != len(self.translations):
            raise ValueError(f"kernel shape {k.shape} does not match {len(self.translations)} translations")
        object.__setattr__(self, "k", k)


@dataclass(frozen=True)
class QTensor:
    """Sparse ``q[i, i', l]`` stored as coordinate arrays sorted by ``(i', i, l)``.

    Every stored value already includes the Gaussian convolution constant.
    """

    src: np.ndarray
    dst: np.ndarray
    trans: np.ndarray
    values: np.ndarray
    n_in: int
    n_out: int
    n_trans: int
    gamma: float
    constant: float

    @property
    def nnz(self) -> int:
        return self.values.size

    def dense(self) -> np.ndarray:
        out = np.zeros((self.n_in, self.n_out, self.n_trans))
        out[self.src, self.dst, self.trans] = self.values
        return out

    def contraction_matrix(self, omega, c: float) -> sp.csr_matrix:
        """``A[i', i * L + l] = c * w_i * q[i, i', l]`` as CSR with sorted columns."""
        w = np.asarray(omega, dtype=np.float64).reshape(-1)
        if w.shape[0] != self.n_in:
            raise ValueError(f"omega has {w.shape[0]} entries, q expects {self.n_in}")
        cols = self.src * self.n_trans + self.trans
        mat = sp.csr_matrix(
            (c * w[self.src] * self.values, (self.dst, cols)),
            shape=(self.n_out, self.n_in * self.n_trans),
        )
        mat.sort_indices()
        return mat


def build_q(
    in_cloud,
    out_cloud,
    sigma: float,
    translations: TranslationSet,
    cutoff_factor: float | None = 4.0,
) -> QTensor:
    """``q[i, i', l] = C * Phi_gamma(|x_i' - x_i - y_l|)`` with ``gamma = sqrt(2) sigma``.

    Entries with distance above ``cutoff_factor * gamma`` are left out;
    ``cutoff_factor=None`` keeps every entry.
    """
    xin = as_points(in_cloud)
    xout = as_points(out_cloud)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    pair = gaussian_conv_pair(sigma, np.zeros(3), sigma, np.zeros(3))
    gamma, const = pair.gamma, pair.constant
    offsets = translations.offsets
    n_trans = offsets.shape[0]
    if cutoff_factor is None:
        dst = np.repeat(np.arange(xout.shape[0]), xin.shape[0])
        src = np.tile(np.arange(xin.shape[0]), xout.shape[0])
        cut2 = np.inf
    else:
        if not cutoff_factor > 0:
            raise ValueError("cutoff_factor must be positive")
        cut = cutoff_factor * gamma
        cut2 = cut * cut
        reach = float(np.max(np.linalg.norm(offsets, axis=1))) + cut
        dst, src = radius_pairs(xout, xin, reach)
    rel = xout[dst] - xin[src]
    # Expanded squared distances screen all translations at once; kept
    # entries are then recomputed from explicit differences.
    approx = (np.einsum("ij,ij->i", rel, rel)[:, None] - 2.0 * rel @ offsets.T
              + np.einsum("ij,ij->i", offsets, offsets)[None, :])
    if np.isfinite(cut2):
        pair_idx, trans = np.nonzero(approx <= cut2 * (1.0 + 1e-9) + 1e-300)
    else:
        pair_idx, trans = np.nonzero(np.ones_like(approx, dtype=bool))
    diff = rel[pair_idx] - offsets[trans]
    d2 = np.einsum("ij,ij->i", diff, diff)
    keep = d2 <= cut2
    pair_idx, trans, d2 = pair_idx[keep], trans[keep].astype(np.int64), d2[keep]
    vals = const * np.exp(-d2 / (2.0 * gamma * gamma))
    # Pairs arrive sorted by (dst, src) and nonzero is row-major, so the
    # entries are already ordered by (dst, src, trans).
    dst, src = dst[pair_idx], src[pair_idx]
    return QTensor(src, dst, trans, vals,
                   xin.shape[0], xout.shape[0], n_trans, gamma, const)


def _check_shapes(n_in: int, n_out: int, n_trans: int, f: np.ndarray, k: np.ndarray, omega) -> None:
    if f.ndim != 2 or f.shape[0] != n_in:
        raise ValueError(f"features must have shape ({n_in}, J), got {f.shape}")
    if k.ndim != 3 or k.shape[0] != n_trans or k.shape[1] != f.shape[1]:
        raise ValueError(f"kernel must have shape ({n_trans}, {f.shape[1]}, M), got {k.shape}")
    if np.asarray(omega).reshape(-1).shape[0] != n_in:
        raise ValueError("omega length does not match the input cloud")


def _kernel_array(k) -> np.ndarray:
    return np.asarray(k.k if isinstance(k, KernelWeights) else k, dtype=np.float64)


def apply_kernel(f: np.ndarray, k: np.ndarray) -> np.ndarray:
    """``G[i * L + l, m] = sum_j f_ij k_ljm``."""
    n_trans, n_in_ch, n_out_ch = k.shape
    flat = k.transpose(1, 0, 2).reshape(n_in_ch, n_trans * n_out_ch)
    return (f @ flat).reshape(f.shape[0] * n_trans, n_out_ch)


def conv_forward(q: QTensor, omega, f, k, c: float, matrix: sp.csr_matrix | None = None) -> np.ndarray:
    """``out[i', m] = c sum_{i,j,l} f_ij k_ljm w_i q[i, i', l]``, shape ``(I_out, M)``."""
    f = np.asarray(f, dtype=np.float64)
    kk = _kernel_array(k)
    _check_shapes(q.n_in, q.n_out, q.n_trans, f, kk, omega)
    if matrix is None:
        matrix = q.contraction_matrix(omega, c)
    return matrix @ apply_kernel(f, kk)


def conv_backward(q: QTensor, omega, f, k, c: float, grad_out, matrix: sp.csr_matrix | None = None):
    """Gradients of :func:`conv_forward` with respect to ``f`` and ``k``.

    Point positions, ``omega`` and ``q`` are constants of the graph.
    """
    f = np.asarray(f, dtype=np.float64)
    kk = _kernel_array(k)
    _check_shapes(q.n_in, q.n_out, q.n_trans, f, kk, omega)
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != (q.n_out, kk.shape[2]):
        raise ValueError(f"grad_out must have shape ({q.n_out}, {kk.shape[2]}), got {g.shape}")
    if matrix is None:
        matrix = q.contraction_matrix(omega, c)
    return contraction_backward(matrix, f, kk, g)


def contraction_backward(matrix: sp.csr_matrix, f: np.ndarray, k: np.ndarray, g: np.ndarray):
    n_trans, n_in_ch, n_out_ch = k.shape
    back = (matrix.T @ g).reshape(f.shape[0], n_trans * n_out_ch)
    grad_f = back @ k.transpose(0, 2, 1).reshape(n_trans * n_out_ch, n_in_ch)
    grad_k = (f.T @ back).reshape(n_in_ch, n_trans, n_out_ch).transpose(1, 0, 2)
    return grad_f, grad_k


def q_quadrature_oracle(xi, xip, yl, sigma: float, nodes: int = 48, panels: int = 4) -> float:
    """Direct numerical value of ``int Phi(|y - x_i|) Phi(|x_i' - y - y_l|) dy``.

    Composite Gauss-Legendre product rule over a cube of half-width ``8 sigma``
    centred midway between the two Gaussian centres. Relative accuracy is
    better than 1e-10 for sigma in [0.05, 2] with the default resolution.
    """
    xi = np.asarray(xi, dtype=np.float64)
    b = np.asarray(xip, dtype=np.float64) - np.asarray(yl, dtype=np.float64)
    mid = 0.5 * (xi + b)
    t, w = np.polynomial.legendre.leggauss(nodes)
    half = 8.0 * sigma
    edges = np.linspace(-half, half, panels + 1)
    pts = np.concatenate([0.5 * (e1 - e0) * t + 0.5 * (e1 + e0) for e0, e1 in zip(edges[:-1], edges[1:])])
    wts = np.concatenate([0.5 * (e1 - e0) * w for e0, e1 in zip(edges[:-1], edges[1:])])
    inv = 1.0 / (2.0 * sigma * sigma)
    axis_terms = []
    for ax in range(3):
        y = mid[ax] + pts
        # The integrand factorizes over axes.
        axis_terms.append(np.sum(wts * np.exp(-((y - xi[ax]) ** 2) * inv) * np.exp(-((b[ax] - y) ** 2) * inv)))
    return float(np.prod(axis_terms))


def box_conv_forward(grid_points, f, k, atol: float = 1e-9) -> np.ndarray:
    """Convolution with unit box cells on an integer lattice, ``w_i = 1`` and ``c = 1``.

    ``q[i, i', l]`` is the overlap volume of the cells at ``x_i + y_l`` and ``x_i'``.
    """
    pts = as_points(grid_points)
    kw = k if isinstance(k, KernelWeights) else None
    if kw is None:
        raise ValueError("box convolution needs KernelWeights with integer translations")
    offsets = kw.translations.offsets
    if np.max(np.abs(pts - np.round(pts))) > atol:
        raise ValueError("grid points must lie on the integer lattice")
    if np.max(np.abs(offsets - np.round(offsets))) > atol:
        raise ValueError("box translations must be integer offsets")
    f = np.asarray(f, dtype=np.float64)
    kk = np.asarray(kw.k, dtype=np.float64)
    n = pts.shape[0]
    n_trans = offsets.shape[0]
    _check_shapes(n, n, n_trans, f, kk, np.ones(n))
    reach = float(np.max(np.linalg.norm(offsets, axis=1))) + np.sqrt(3.0)
    dst, src = radius_pairs(pts, pts, reach)
    rel = pts[dst] - pts[src]
    rows, cols, vals = [], [], []
    for l in range(n_trans):
        v = box_overlap(rel - offsets[l], 0.5)
        keep = v > 0
        rows.append(dst[keep])
        cols.append(src[keep] * n_trans + l)
        vals.append(v[keep])
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n * n_trans)
    )
    mat.sort_indices()
    return mat @ apply_kernel(f, kk)
