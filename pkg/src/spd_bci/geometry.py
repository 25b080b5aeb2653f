"""Spatial covariance geometry on the SPD manifold.

Covariance matrices of multichannel signals live on the manifold of
symmetric positive definite matrices. Under the affine-invariant metric
the geodesic distance between C1 and C2 is

    delta(C1, C2) = ||log(C1^{-1/2} C2 C1^{-1/2})||_F,

which is unchanged by any congruence C -> W^T C W with invertible W.
This module provides the matrix log/exp/inverse-sqrt kernels (one
symmetric eigendecomposition each), the log/exp maps between manifold
and tangent space, the iterative Riemannian (Karcher) mean, tangent-space
half-vectorization with the sqrt(2) off-diagonal coefficient, PCA rank
reduction, and a minimum-distance-to-mean classifier.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

EIGENVALUE_RTOL = 1e-12


def _symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def _spd_eigh(mat: np.ndarray, what: str = "matrix"):
    """Eigendecomposition of a symmetric matrix, rejecting near-singular SPD input.

    Eigenvalues below EIGENVALUE_RTOL times the largest (or non-positive)
    mean the matrix is not usably positive definite.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{what} must be square, got shape {mat.shape}")
    eigvals, eigvecs = np.linalg.eigh(_symmetrize(mat))
    largest = eigvals[-1]
    if largest <= 0.0 or eigvals[0] <= EIGENVALUE_RTOL * largest:
        raise NumericalError(
            f"{what} is not positive definite within tolerance: "
            f"eigenvalue range [{eigvals[0]:.3e}, {largest:.3e}]"
        )
    return eigvals, eigvecs


def _apply_to_eigvals(mat: np.ndarray, func, what: str) -> np.ndarray:
    eigvals, eigvecs = _spd_eigh(mat, what)
    return _symmetrize((eigvecs * func(eigvals)) @ eigvecs.T)


def logm(mat: np.ndarray) -> np.ndarray:
    """Matrix logarithm of an SPD matrix."""
    return _apply_to_eigvals(mat, np.log, "logm input")


def expm(mat: np.ndarray) -> np.ndarray:
    """Matrix exponential of a symmetric matrix.

    Unlike :func:`logm` the input only needs to be symmetric, since
    tangent-space matrices generally have negative eigenvalues.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expm input must be square, got shape {mat.shape}")
    eigvals, eigvecs = np.linalg.eigh(_symmetrize(mat))
    return _symmetrize((eigvecs * np.exp(eigvals)) @ eigvecs.T)


def sqrtm(mat: np.ndarray) -> np.ndarray:
    """Symmetric square root of an SPD matrix."""
    return _apply_to_eigvals(mat, np.sqrt, "sqrtm input")


def invsqrtm(mat: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of an SPD matrix."""
    return _apply_to_eigvals(mat, lambda w: 1.0 / np.sqrt(w), "invsqrtm input")


def is_spd(mat: np.ndarray) -> bool:
    """True when the matrix is symmetric positive definite within tolerance."""
    try:
        _spd_eigh(mat)
    except (NumericalError, ValueError):
        return False
    return True


def scm(samples) -> np.ndarray:
    """Spatial covariance matrix C = X X^T / (T - 1) of one trial.

    Accepts an (n_channels, n_samples) array or an object exposing
    ``.samples`` with that shape. The result is symmetric positive
    semi-definite; it is strictly positive definite only when the trial
    has full channel rank.
    """
    x = np.asarray(getattr(samples, "samples", samples), dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a channels x samples matrix, got shape {x.shape}")
    if x.shape[1] < 2:
        raise ValueError("need at least two samples to estimate a covariance")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    return _symmetrize(x @ x.T / (x.shape[1] - 1))


def ridge_regularize(mat: np.ndarray, gamma: float = 1e-8) -> np.ndarray:
    """Add gamma * mean(eigenvalue) to the diagonal.

    Optional escape hatch for ill-conditioned covariances of real
    recordings; it nudges semi-definite matrices into the SPD cone while
    perturbing well-conditioned ones negligibly.
    """
    mat = np.asarray(mat, dtype=np.float64)
    return mat + (gamma * np.trace(mat) / mat.shape[0]) * np.eye(mat.shape[0])


def euclidean_mean(mats) -> np.ndarray:
    """Arithmetic mean of covariance matrices (the swelling-prone average)."""
    mats = np.asarray(mats, dtype=np.float64)
    if mats.ndim != 3 or mats.shape[0] < 1:
        raise ValueError(f"expected a non-empty stack of square matrices, got shape {mats.shape}")
    return _symmetrize(mats.mean(axis=0))


def pca_spatial_filter(mats, rank: int) -> np.ndarray:
    """Top-``rank`` eigenvectors of the Euclidean-mean covariance.

    Columns are orthonormal and ordered by descending eigenvalue, so
    applying the filter keeps the directions of largest average variance
    and projects rank-deficient covariances back into the SPD cone.
    """
    mean = euclidean_mean(mats)
    n = mean.shape[0]
    if not 1 <= rank <= n:
        raise ValueError(f"rank must be in [1, {n}], got {rank}")
    eigvals, eigvecs = np.linalg.eigh(mean)
    order = np.argsort(eigvals)[::-1]
    return eigvecs[:, order[:rank]]


def reduce_signal(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Project a channels x samples matrix: X' = W^T X."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != w.shape[0]:
        raise ValueError(f"filter expects {w.shape[0]} channels, signal has {x.shape[0]}")
    return w.T @ x


def reduce_covariance(w: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Project a covariance: C' = W^T C W."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (w.shape[0], w.shape[0]):
        raise ValueError(
            f"filter expects a {w.shape[0]} x {w.shape[0]} covariance, got {c.shape}"
        )
    return _symmetrize(w.T @ c @ w)


def airm_distance(c1: np.ndarray, c2: np.ndarray) -> float:
    """Affine-invariant (geodesic) distance between two SPD matrices."""
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    if c1.shape != c2.shape:
        raise ValueError(f"dimension mismatch: {c1.shape} vs {c2.shape}")
    inv_sqrt = invsqrtm(c1)
    whitened = _symmetrize(inv_sqrt @ c2 @ inv_sqrt)
    eigvals, _ = _spd_eigh(whitened, "whitened matrix")
    return float(np.sqrt(np.sum(np.log(eigvals) ** 2)))


def log_map(c_ref: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Project C from the manifold to the tangent space at C_ref."""
    half = sqrtm(c_ref)
    inv_half = invsqrtm(c_ref)
    return _symmetrize(half @ logm(_symmetrize(inv_half @ c @ inv_half)) @ half)


def exp_map(c_ref: np.ndarray, tangent: np.ndarray) -> np.ndarray:
    """Project a tangent matrix at C_ref back onto the manifold."""
    half = sqrtm(c_ref)
    inv_half = invsqrtm(c_ref)
    return _symmetrize(half @ expm(_symmetrize(inv_half @ tangent @ inv_half)) @ half)


@dataclass
class MeanInfo:
    """Convergence report for the iterative Riemannian mean."""

    converged: bool
    iterations: int
    grad_norm: float


def riemannian_mean(mats, tol: float = 1e-9, max_iter: int = 50, return_info: bool = False):
    """Riemannian (Karcher) mean: minimizer of summed squared geodesic distances.

    Iterates from the Euclidean mean: average the log-maps of all inputs
    at the current estimate, step along that tangent mean with the exp
    map, and stop once its Frobenius norm drops below ``tol`` or after
    ``max_iter`` iterations. The full tangent step is taken each time (no
    damping); non-convergence raises a warning rather than an error.
    """
    mats = np.asarray(mats, dtype=np.float64)
    if mats.ndim != 3 or mats.shape[0] < 1:
        raise ValueError(f"expected a non-empty stack of square matrices, got shape {mats.shape}")
    center = euclidean_mean(mats)
    converged = False
    grad_norm = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        eigvals, eigvecs = _spd_eigh(center, "mean iterate")
        sqrt_vals = np.sqrt(eigvals)
        half = _symmetrize((eigvecs * sqrt_vals) @ eigvecs.T)
        inv_half = _symmetrize((eigvecs / sqrt_vals) @ eigvecs.T)
        whitened_logs = np.stack(
            [logm(_symmetrize(inv_half @ m @ inv_half)) for m in mats]
        )
        tangent_mean = whitened_logs.mean(axis=0)
        grad_norm = float(np.linalg.norm(half @ tangent_mean @ half, ord="fro"))
        center = _symmetrize(half @ expm(tangent_mean) @ half)
        if grad_norm < tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"Riemannian mean did not converge in {max_iter} iterations "
            f"(last tangent norm {grad_norm:.3e})",
            RuntimeWarning,
            stacklevel=2,
        )
    if return_info:
        return center, MeanInfo(converged=converged, iterations=iterations, grad_norm=grad_norm)
    return center


def tangent_vectorize(c_ref: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Half-vectorized tangent-space image of C at reference C_ref.

    Computes S = log(C_ref^{-1/2} C C_ref^{-1/2}) and returns its upper
    triangle row-major with off-diagonal entries scaled by sqrt(2), so the
    Euclidean norm of the vector equals the geodesic distance:
    ||vec||_2 = ||S||_F = delta(C_ref, C).
    """
    inv_half = invsqrtm(c_ref)
    s = logm(_symmetrize(inv_half @ c @ inv_half))
    return upper_vectorize(s)


def upper_vectorize(sym: np.ndarray) -> np.ndarray:
    """Row-major upper triangle with sqrt(2)-weighted off-diagonals."""
    sym = np.asarray(sym, dtype=np.float64)
    r = sym.shape[0]
    rows, cols = np.triu_indices(r)
    coeff = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return sym[rows, cols] * coeff


def tangent_dimension(rank: int) -> int:
    """Length of a half-vectorized rank x rank symmetric matrix."""
    return rank * (rank + 1) // 2


def tangent_features(scms_per_band, refs_per_band) -> np.ndarray:
    """Per-band tangent vectors of one trial, concatenated across bands.

    ``scms_per_band`` holds one reduced SCM per frequency sub-band and
    ``refs_per_band`` the matching reference (normally the per-band
    Riemannian mean). The result has length sum of R_b(R_b+1)/2.
    """
    if len(scms_per_band) != len(refs_per_band):
        raise ValueError(
            f"{len(scms_per_band)} band SCMs do not match {len(refs_per_band)} references"
        )
    if not len(scms_per_band):
        raise ValueError("need at least one band")
    return np.concatenate(
        [tangent_vectorize(ref, c) for ref, c in zip(refs_per_band, scms_per_band)]
    )


class MdrmClassifier:
    """Minimum distance to Riemannian mean.

    Fit estimates one Riemannian mean per class; predict assigns each
    covariance to the nearest class mean under the affine-invariant
    distance, breaking ties toward the lowest class index.
    """

    def __init__(self, tol: float = 1e-9, max_iter: int = 50):
        self.tol = tol
        self.max_iter = max_iter
        self.classes_: np.ndarray | None = None
        self.means_: list[np.ndarray] | None = None

    def fit(self, covs, labels):
        covs = np.asarray(covs, dtype=np.float64)
        labels = np.asarray(labels)
        if covs.shape[0] != labels.shape[0]:
            raise ValueError(f"{covs.shape[0]} covariances but {labels.shape[0]} labels")
        self.classes_ = np.unique(labels)
        if len(self.classes_) < 1:
            raise ValueError("no classes in training labels")
        self.means_ = []
        for cls in self.classes_:
            members = covs[labels == cls]
            if members.shape[0] == 0:
                raise ValueError(f"class {cls} has no training samples")
            self.means_.append(riemannian_mean(members, tol=self.tol, max_iter=self.max_iter))
        return self

    def distances(self, covs) -> np.ndarray:
        if self.means_ is None:
            raise ValueError("classifier is not fitted")
        covs = np.asarray(covs, dtype=np.float64)
        if covs.ndim == 2:
            covs = covs[None]
        return np.array(
            [[airm_distance(c, mean) for mean in self.means_] for c in covs]
        )

    def predict(self, covs) -> np.ndarray:
        dist = self.distances(covs)
        return self.classes_[np.argmin(dist, axis=1)]
