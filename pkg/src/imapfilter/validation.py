"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor


class NumericalError(RuntimeError):
    """A linear-algebra step failed (singular innovation, Cholesky breakdown)."""


def as_vector(x, dim=None, name="x"):
    """Coerce to a 1-d float64 array, optionally checking its length."""
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"{name} must have length {dim}, got {v.shape[0]}")
    return v


def as_matrix(a, shape=None, name="A"):
    """Coerce to a 2-d float64 array, optionally checking its shape."""
    m = np.asarray(a, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim == 1:
        m = np.diag(m)
    if m.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {m.shape}")
    if shape is not None and m.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {m.shape}")
    return m


def symmetrize(a):
    return 0.5 * (a + a.T)


def check_symmetric(a, tol=1e-8, name="A"):
    a = as_matrix(a, name=name)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.T).max() > tol * scale:
        raise ValueError(f"{name} is not symmetric")
    return a


def spd_cholesky(a, name="A"):
    """Validate symmetric positive definiteness and return the lower Cholesky factor."""
    a = check_symmetric(a, name=name)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} is not positive definite") from None


def check_spd(a, name="A"):
    spd_cholesky(a, name=name)
    return as_matrix(a, name=name)


def psd_factor(a, name="A", tol=1e-10):
    """Factor B with B @ B.T = a for a symmetric PSD matrix.

    Uses Cholesky when a is positive definite, an eigendecomposition square
    root otherwise (covers exactly-singular covariances such as zero noise).
    """
    a = check_symmetric(a, name=name)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        eigvals, eigvecs = np.linalg.eigh(a)
        scale = max(1.0, float(eigvals.max(initial=0.0)))
        if eigvals.min(initial=0.0) < -tol * scale:
            raise ValueError(f"{name} is not positive semidefinite") from None
        return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def check_psd(a, name="A", tol=1e-10):
    psd_factor(a, name=name, tol=tol)
    return as_matrix(a, name=name)


def cho_factor_checked(a, name="S"):
    """scipy cho_factor that reports failure as a NumericalError."""
    try:
        return cho_factor(a, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{name} is singular or not positive definite") from exc


def chol_with_jitter(a, initial=1e-12, maximum=1e-6, name="Sigma"):
    """Lower Cholesky factor, escalating diagonal jitter on failure.

    Jitter starts at ``initial`` (relative to the mean diagonal) and grows by
    10x up to ``maximum`` before giving up.
    """
    a = symmetrize(np.asarray(a, dtype=float))
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    scale = max(float(np.trace(a)) / a.shape[0], 1.0)
    jitter = initial
    eye = np.eye(a.shape[0])
    while jitter <= maximum:
        try:
            return np.linalg.cholesky(a + jitter * scale * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(f"{name} not factorizable after jitter up to {maximum}")


def check_positive(value, name="value"):
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def check_unit_open(value, name="value"):
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")
    return value


def as_generator(seed):
    """Accept an int seed, a SeedSequence, a Generator, or None."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
