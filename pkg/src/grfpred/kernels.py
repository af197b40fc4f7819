"""Covariance building blocks.

Four families: a Gaussian kernel on marker distances, an indicator kernel
on subpopulation labels, a standardized lattice-autoregression kernel on
plot coordinates, and the genomic relationship matrices (VanRaden kinship
and the raw linear kernel) used by the baseline predictors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import FieldLayout

KERNEL_KINDS = ("marker", "subpop", "spatial", "kinship", "linear", "identity")

#: kinds required to carry an exact unit diagonal
UNIT_DIAGONAL_KINDS = ("marker", "subpop", "spatial")


@dataclass(frozen=True)
class KernelMatrix:
    """A symmetric PSD similarity matrix tagged with its construction."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ValueError("kernel matrix must be square")
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path):
        """Debug dump; one row per line, full precision."""
        np.savetxt(path, self.values, delimiter=",", fmt="%.17g")


def path_laplacian(k: int) -> np.ndarray:
    """Tridiagonal coupling matrix of a length-k path.

    Endpoints get diagonal 1, interior nodes 2, adjacent pairs -1. Rows
    sum to zero for k >= 2; k = 1 is the degenerate single-node case
    [[1]].
    """
    if k < 1:
        raise ValueError("path length must be >= 1")
    w = np.zeros((k, k))
    np.fill_diagonal(w, 2.0)
    w[0, 0] = w[k - 1, k - 1] = 1.0
    idx = np.arange(k - 1)
    w[idx, idx + 1] = -1.0
    w[idx + 1, idx] = -1.0
    return w


@dataclass(frozen=True)
class LatticeSpec:
    """Lattice autoregression parameters on a padded rectangular array.

    The observed m1 x m2 field is embedded in an (m1+4) x (m2+4) array:
    two rings of virtual plots damp boundary artifacts. ``beta01`` weights
    within-column (vertical) coupling, ``beta10`` within-row (horizontal)
    coupling, and ``beta00`` the diagonal; identifiability requires
    beta00 + 2*(beta01 + beta10) = 1 with all weights non-negative and
    beta00 > 0.
    """

    m1: int
    m2: int
    beta01: float
    beta10: float
    beta00: float = 0.001

    def __post_init__(self):
        if self.m1 < 1 or self.m2 < 1:
            raise ValueError("lattice dimensions must be positive")
        if self.beta00 <= 0:
            raise ValueError("beta00 must be > 0 (the singular limit is not supported)")
        if self.beta01 < 0 or self.beta10 < 0:
            raise ValueError("beta01 and beta10 must be non-negative")
        if abs(self.beta00 + 2.0 * (self.beta01 + self.beta10) - 1.0) > 1e-12:
            raise ValueError("constraint beta00 + 2*(beta01 + beta10) = 1 violated")

    @property
    def m1p(self) -> int:
        return self.m1 + 4

    @property
    def m2p(self) -> int:
        return self.m2 + 4

    @property
    def theta(self) -> float:
        """Anisotropy mixing scalar: share of the off-diagonal budget on beta01."""
        return 2.0 * self.beta01 / (1.0 - self.beta00)

    @classmethod
    def from_theta(cls, m1: int, m2: int, theta: float, beta00: float = 0.001) -> "LatticeSpec":
        """Build a spec from the single free mixing scalar theta in [0, 1].

        beta01 = theta*(1-beta00)/2 and beta10 = (1-theta)*(1-beta00)/2,
        so the identifiability constraint holds by construction and the
        boundary cases theta in {0, 1} are reachable.
        """
        if not 0.0 <= theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        half = 0.5 * (1.0 - beta00)
        return cls(m1=m1, m2=m2, beta01=theta * half, beta10=(1.0 - theta) * half, beta00=beta00)


def build_precision(spec: LatticeSpec) -> sp.csr_matrix:
    """Sparse precision matrix of the padded-lattice autoregression.

    W = beta00*I + beta01*(I_{m2'} kron W_{m1'}) + beta10*(W_{m2'} kron I_{m1'})
    over the padded array in column-major plot enumeration. Row sums all
    equal beta00, and W is positive definite for beta00 > 0.
    """
    w1 = sp.csr_matrix(path_laplacian(spec.m1p))
    w2 = sp.csr_matrix(path_laplacian(spec.m2p))
    i1 = sp.identity(spec.m1p, format="csr")
    i2 = sp.identity(spec.m2p, format="csr")
    m = spec.m1p * spec.m2p
    w = (
        spec.beta00 * sp.identity(m, format="csr")
        + spec.beta01 * sp.kron(i2, w1, format="csr")
        + spec.beta10 * sp.kron(w2, i1, format="csr")
    )
    return w.tocsr()


class LatticeKernelBuilder:
    """Standardized lattice correlations via the padded path eigenbases.

    The two path matrices commute under the Kronecker sum, so W(theta)
    diagonalizes in the fixed basis U2 kron U1 with eigenvalues
    beta00 + beta01*lam1_i + beta10*lam2_j. Entries of W^{-1} restricted
    to observed plots then come from one dense product per theta, with no
    sparse factorization. Heavier per-theta work is cached.
    """

    def __init__(self, m1: int, m2: int, beta00: float = 0.001, cache_size: int = 8):
        if beta00 <= 0:
            raise ValueError("beta00 must be > 0")
        self.m1, self.m2, self.beta00 = m1, m2, beta00
        self.m1p, self.m2p = m1 + 4, m2 + 4
        lam1, u1 = np.linalg.eigh(path_laplacian(self.m1p))
        lam2, u2 = np.linalg.eigh(path_laplacian(self.m2p))
        self._lam1, self._u1 = lam1, u1
        self._lam2, self._u2 = lam2, u2
        self._cache: dict[tuple, np.ndarray] = {}
        self._vcache: dict[tuple, np.ndarray] = {}
        self._cache_size = cache_size

    def _eigvec_rows(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Rows of U2 kron U1 for the padded indices of the given plots.

        Depends only on the plot set, so it is cached across the many
        theta values visited during optimization.
        """
        key = (rows.tobytes(), cols.tobytes())
        hit = self._vcache.get(key)
        if hit is not None:
            return hit
        pr = rows + 1  # observed row r (1-based) -> padded row r+2 -> 0-based r+1
        pc = cols + 1
        if rows.size and (
            pr.min() < 0 or pr.max() >= self.m1p or pc.min() < 0 or pc.max() >= self.m2p
        ):
            raise ValueError("plot index outside the padded lattice")
        v = (self._u2[pc][:, :, None] * self._u1[pr][:, None, :]).reshape(
            len(pr), self.m1p * self.m2p
        )
        if len(self._vcache) >= self._cache_size:
            self._vcache.pop(next(iter(self._vcache)))
        self._vcache[key] = v
        return v

    def _inv_eigvals(self, theta: float) -> np.ndarray:
        half = 0.5 * (1.0 - self.beta00)
        b01, b10 = theta * half, (1.0 - theta) * half
        d = self.beta00 + b10 * self._lam2[:, None] + b01 * self._lam1[None, :]
        return 1.0 / d.reshape(-1)

    def winv_submatrix(self, theta: float, rows, cols) -> np.ndarray:
        """Submatrix of W(theta)^{-1} at the given observed plots."""
        v = self._eigvec_rows(np.asarray(rows, dtype=int), np.asarray(cols, dtype=int))
        s = (v * self._inv_eigvals(theta)) @ v.T
        return 0.5 * (s + s.T)

    def correlation(self, theta: float, rows, cols) -> np.ndarray:
        """Unit-diagonal standardized kernel among the given plots."""
        key = (float(theta), np.asarray(rows).tobytes(), np.asarray(cols).tobytes())
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        s = self.winv_submatrix(theta, rows, cols)
        d = np.sqrt(np.diag(s))
        c = s / np.outer(d, d)
        np.fill_diagonal(c, 1.0)
        if len(self._cache) >= self._cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = c
        return c

    def correlation_into(self, theta: float, rows, cols, out, tmp) -> np.ndarray:
        """Standardized kernel written into preallocated buffers.

        ``out`` is n x n and ``tmp`` n x (m1' m2'). No large temporaries
        are allocated, which keeps optimizer inner loops cheap.
        """
        v = self._eigvec_rows(np.asarray(rows, dtype=int), np.asarray(cols, dtype=int))
        np.multiply(v, self._inv_eigvals(theta), out=tmp)
        np.dot(tmp, v.T, out=out)
        d = np.sqrt(np.diag(out).copy())
        out /= d[:, None]
        out /= d[None, :]
        np.fill_diagonal(out, 1.0)
        return out


def spatial_kernel(spec: LatticeSpec, layout: FieldLayout) -> KernelMatrix:
    """Standardized lattice-autoregression kernel for the observed plots.

    Entry (i, j) is the correlation implied by W^{-1} between the padded
    positions of plots i and j; the diagonal is exactly 1 and entries lie
    in [-1, 1].
    """
    if layout.m1 != spec.m1 or layout.m2 != spec.m2:
        raise ValueError("layout dimensions do not match lattice spec")
    builder = LatticeKernelBuilder(spec.m1, spec.m2, spec.beta00)
    c = builder.correlation(spec.theta, layout.rows, layout.cols)
    return KernelMatrix(c, "spatial")


def marker_kernel(sq_dists: np.ndarray, tau: float) -> KernelMatrix:
    """Gaussian kernel exp(-d^2/tau) on precomputed squared distances."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    c = np.exp(-np.asarray(sq_dists, dtype=float) / tau)
    np.fill_diagonal(c, 1.0)
    return KernelMatrix(c, "marker")


def subpop_kernel(labels) -> KernelMatrix:
    """Indicator kernel: 1 where two observations share a label, else 0."""
    lab = np.asarray(labels)
    c = (lab[:, None] == lab[None, :]).astype(float)
    return KernelMatrix(c, "subpop")


def indicator_cross(labels_a, labels_b) -> np.ndarray:
    la, lb = np.asarray(labels_a), np.asarray(labels_b)
    return (la[:, None] == lb[None, :]).astype(float)


def vanraden_kinship(g, maf=None) -> KernelMatrix:
    """Genomic relationship matrix K = Xc Xc' / sum_i 2 p_i (1 - p_i).

    ``Xc`` is the column-centered dosage matrix. When ``maf`` is omitted,
    allele frequencies come from the matrix itself under dosage /
    max-dosage coding; monomorphic markers (p in {0, 1}) are dropped from
    both the numerator and the denominator.
    """
    x = g.values if hasattr(g, "values") else np.asarray(g, dtype=float)
    dmax = x.max()
    if dmax <= 0:
        raise ValueError("all markers monomorphic: kinship denominator is zero")
    if maf is None:
        p = x.mean(axis=0) / dmax
        centers = x.mean(axis=0)
    else:
        p = np.asarray(maf, dtype=float)
        if p.shape != (x.shape[1],):
            raise ValueError("maf length must equal the number of markers")
        centers = dmax * p
    keep = (p > 0.0) & (p < 1.0)
    if not np.any(keep):
        raise ValueError("all markers monomorphic: kinship denominator is zero")
    xc = x[:, keep] - centers[keep]
    denom = float(np.sum(2.0 * p[keep] * (1.0 - p[keep])))
    k = (xc @ xc.T) / denom
    return KernelMatrix(0.5 * (k + k.T), "kinship")


def rr_kernel(g) -> KernelMatrix:
    """Linear kernel X X' on the raw dosage matrix (no centering/scaling)."""
    x = g.values if hasattr(g, "values") else np.asarray(g, dtype=float)
    k = x @ x.T
    return KernelMatrix(0.5 * (k + k.T), "linear")
