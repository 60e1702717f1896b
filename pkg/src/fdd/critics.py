"""Distribution distances between two feature sets.

* ``frechet_distance``  Wasserstein-2 between Gaussian fits (FID/FDD critic)
* ``mmd2_poly``         unbiased squared MMD with a polynomial kernel (KID/KDD critic)
* ``topology_distance`` l_p distance between sorted 0-dim persistence deaths (TD/TDD critic)

All routines work in float64.

Inner products and squared distances are accumulated one feature column at a
time, in column order, and the large sums use ``math.fsum``. This fixes the
rounding of every kernel entry and every sum, independent of BLAS, so an
element-by-element loop evaluated in the same order reproduces the results bit
for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError, NumericalError

SYMMETRY_TOL = 1e-10
NEGATIVE_EIG_TOL = 1e-8
FD_NEGATIVE_TOL = 1e-6


def _features(x, name: str = "features", min_rows: int = 2) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be an N x D matrix, got shape {arr.shape}")
    if arr.shape[0] < min_rows:
        raise InputError(f"{name} needs at least {min_rows} rows, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{name} contains NaN or Inf")
    return arr


# ---------------------------------------------------------------------------
# Gaussian summaries and the Frechet distance


@dataclass
class GaussianSummary:
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def summarize(features) -> GaussianSummary:
    """Column means and unbiased (N-1) covariance, symmetrised."""
    x = _features(features)
    mu = x.mean(axis=0)
    centered = x - mu
    sigma = centered.T @ centered / (x.shape[0] - 1)
    return GaussianSummary(mu, 0.5 * (sigma + sigma.T))


def _symmetric(a, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{what} must be square, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise InputError(f"{what} is not symmetric")
    return 0.5 * (a + a.T)


def _psd_eigh(a: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(a)
    floor = -NEGATIVE_EIG_TOL * max(float(np.sum(np.abs(vals))), np.finfo(float).tiny)
    if vals.size and vals.min() < floor:
        raise InputError(f"{what} is not positive semidefinite (min eigenvalue {vals.min():.3g})")
    return np.clip(vals, 0.0, None), vecs


def matrix_sqrt_psd(a) -> np.ndarray:
    """Symmetric square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues slightly below zero (rounding) are clamped to 0 first.
    """
    a = _symmetric(a, "matrix")
    vals, vecs = _psd_eigh(a, "matrix")
    s = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (s + s.T)


def _trace_sqrt_psd(a: np.ndarray) -> float:
    vals, _ = _psd_eigh(0.5 * (a + a.T), "covariance product")
    return float(np.sum(np.sqrt(vals)))


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The cross term is Tr sqrt(S_a^(1/2) S_b S_a^(1/2)), which has the same
    spectrum as S_a S_b but is symmetric PSD.
    """
    if a.mu.shape != b.mu.shape or a.sigma.shape != b.sigma.shape:
        raise DimensionError(f"summaries differ in dimension: {a.dim} vs {b.dim}")
    diff = a.mu - b.mu
    root_a = matrix_sqrt_psd(a.sigma)
    cross = _trace_sqrt_psd(root_a @ _symmetric(b.sigma, "covariance") @ root_a)
    tr_a, tr_b = float(np.trace(a.sigma)), float(np.trace(b.sigma))
    value = float(diff @ diff) + tr_a + tr_b - 2.0 * cross
    if value < -FD_NEGATIVE_TOL * max(1.0, tr_a + tr_b):
        raise NumericalError(f"Frechet distance residual {value:.3g} is below tolerance")
    return max(value, 0.0)


def frechet_distance_features(x, y) -> float:
    return frechet_distance(summarize(x), summarize(y))


# ---------------------------------------------------------------------------
# kernel MMD


def gram(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Inner products x_i . y_j, summed over features in column order."""
    out = np.zeros((x.shape[0], y.shape[0]))
    for d in range(x.shape[1]):
        out += np.multiply.outer(x[:, d], y[:, d])
    return out


def _int_power(base: np.ndarray, degree: int) -> np.ndarray:
    # repeated multiplication, so the rounding does not depend on libm's pow
    out = base
    for _ in range(degree - 1):
        out = out * base
    return out


def poly_kernel(x: np.ndarray, y: np.ndarray, degree: int, gamma: float,
                coef: float) -> np.ndarray:
    """(gamma <x, y> + coef) ** degree for all row pairs."""
    return _int_power(gamma * gram(x, y) + coef, degree)


def mmd2_poly(a, b, degree: int = 3, gamma: float | None = None, coef: float = 1.0) -> float:
    """Unbiased squared MMD with the polynomial kernel.

    mean_{i!=j} k(a_i, a_j) + mean_{i!=j} k(b_i, b_j) - 2 mean_{i,j} k(a_i, b_j).
    ``gamma`` defaults to 1/D. The value can dip slightly below zero.
    """
    x = _features(a, "a")
    y = _features(b, "b")
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"feature dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    if degree < 1:
        raise InputError(f"degree must be >= 1, got {degree}")
    if gamma is None:
        gamma = 1.0 / x.shape[1]
    n, m = x.shape[0], y.shape[0]
    kxx = poly_kernel(x, x, degree, gamma, coef)
    kyy = poly_kernel(y, y, degree, gamma, coef)
    kxy = poly_kernel(x, y, degree, gamma, coef)
    off_x = ~np.eye(n, dtype=bool)
    off_y = ~np.eye(m, dtype=bool)
    term_x = math.fsum(kxx[off_x]) / (n * (n - 1))
    term_y = math.fsum(kyy[off_y]) / (m * (m - 1))
    term_xy = math.fsum(kxy.ravel()) / (n * m)
    return term_x + term_y - 2.0 * term_xy


# ---------------------------------------------------------------------------
# 0-dimensional persistence


@dataclass
class PersistenceDiagram:
    """Finite (birth, death) pairs of H0; the essential class is omitted."""

    pairs: np.ndarray  # shape (N-1, 2)

    @property
    def deaths(self) -> np.ndarray:
        return self.pairs[:, 1]

    def __len__(self) -> int:
        return len(self.pairs)


def pairwise_distances(x) -> np.ndarray:
    """Euclidean distance matrix, squared differences summed in column order."""
    x = np.asarray(x, dtype=np.float64)
    sq = np.zeros((x.shape[0], x.shape[0]))
    for d in range(x.shape[1]):
        diff = np.subtract.outer(x[:, d], x[:, d])
        sq += diff * diff
    return np.sqrt(sq)


class UnionFind:
    """Disjoint sets over 0..n-1 with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n
        self.components = n

    def find(self, i: int) -> int:
        parent = self.parent
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(self, i: int, j: int) -> bool:
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return False
        if self.size[ri] < self.size[rj]:
            ri, rj = rj, ri
        self.parent[rj] = ri
        self.size[ri] += self.size[rj]
        self.components -= 1
        return True


def persistence_0d(points) -> PersistenceDiagram:
    """H0 persistence of the Vietoris-Rips filtration of a point cloud.

    Every point is born at 0; processing edges by increasing length, each
    edge that merges two components kills one of them. The deaths are exactly
    the edge weights of a Euclidean minimum spanning tree.
    """
    x = _features(points, "points")
    n = x.shape[0]
    dist = pairwise_distances(x)
    iu, ju = np.triu_indices(n, k=1)
    weights = dist[iu, ju]
    order = np.argsort(weights, kind="stable")
    uf = UnionFind(n)
    deaths = []
    for e in order:
        if uf.union(int(iu[e]), int(ju[e])):
            deaths.append(weights[e])
            if uf.components == 1:
                break
    deaths = np.asarray(deaths)
    return PersistenceDiagram(np.column_stack([np.zeros_like(deaths), deaths]))


def _canonical_rows(x: np.ndarray) -> np.ndarray:
    # lexicographic row order, so a subsample depends on the set and not its order
    return x[np.lexsort(x.T[::-1])]


def match_sizes(a: np.ndarray, b: np.ndarray, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Subsample the larger set without replacement (seeded) to the smaller size.

    The draw is made from the rows in lexicographic order, so the result does
    not depend on how either set was ordered.
    """
    n = min(len(a), len(b))
    rng = np.random.default_rng(seed)
    if len(a) > n:
        a = _canonical_rows(a)[np.sort(rng.choice(len(a), n, replace=False))]
    if len(b) > n:
        b = _canonical_rows(b)[np.sort(rng.choice(len(b), n, replace=False))]
    return a, b


def topology_distance(a, b, p: float = 2.0, seed: int = 0) -> float:
    """l_p distance between the sorted H0 death vectors of two point clouds."""
    x = _features(a, "a")
    y = _features(b, "b")
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"feature dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    x, y = match_sizes(x, y, seed)
    da = np.sort(persistence_0d(x).deaths)
    db = np.sort(persistence_0d(y).deaths)
    diff = np.abs(da - db)
    if math.isinf(p):
        return float(diff.max(initial=0.0))
    if p <= 0:
        raise InputError(f"p must be positive or inf, got {p}")
    return float(np.sum(diff ** p) ** (1.0 / p))
