"""Shared test helpers: random SPD matrices and finite-difference gradient checks."""

import numpy as np


def random_spd(rng, dim, eig_low=0.5, eig_high=2.0):
    """Random SPD matrix with eigenvalues uniform in [eig_low, eig_high]."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eigvals = rng.uniform(eig_low, eig_high, size=dim)
    return (q * eigvals) @ q.T


def random_symmetric(rng, dim, scale=1.0):
    a = rng.standard_normal((dim, dim))
    sym = 0.5 * (a + a.T)
    return scale * sym / np.linalg.norm(sym)


def random_invertible(rng, dim, sv_low=0.5, sv_high=2.0):
    """Random invertible matrix with singular values in [sv_low, sv_high].

    Bounding the condition number keeps congruence transforms inside the
    range where 1e-8 relative tolerances are meaningful in float64; a raw
    Gaussian draw has a heavy condition-number tail.
    """
    q1, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    q2, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q1 @ np.diag(rng.uniform(sv_low, sv_high, dim)) @ q2


def finite_difference_grads(loss_fn, params, step=1e-5):
    """Central finite differences of a scalar loss over a dict of arrays."""
    grads = {}
    for key, arr in params.items():
        grad = np.zeros_like(arr)
        flat = arr.ravel()
        grad_flat = grad.ravel()
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            up = loss_fn()
            flat[i] = original - step
            down = loss_fn()
            flat[i] = original
            grad_flat[i] = (up - down) / (2.0 * step)
        grads[key] = grad
    return grads


def max_relative_error(analytic, numeric):
    """Largest elementwise deviation, relative to the tensor's gradient scale."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)
