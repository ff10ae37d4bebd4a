"""Duality between truncated preconditioned gradient descent and Gaussian priors.

K steps of the recursion

    mu^(k+1) = mu^(k) + M H^T R^{-1} (y - H mu^(k)),   mu^(0) = mu_minus,

reach the exact posterior mode of a Gaussian prior N(mu_minus, Sigma_minus)
under a Gaussian likelihood. ``lr_matrix_from_prior`` maps a prior covariance
to the learning-rate matrix M that realizes it; ``prior_from_lr_matrix`` is
the reverse map (the prior a chosen M implies). Both directions reduce to a
simultaneous diagonalization of the relevant precision pair.

``compensated_prior`` is the companion identity: filtering with the measurement
noise arbitrarily set to the identity reproduces the optimal Kalman gain once
the predictive covariance is replaced by a compensated one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .validation import (
    as_generator,
    as_matrix,
    as_vector,
    check_symmetric,
    cho_factor_checked,
    spd_cholesky,
    symmetrize,
)

_EIG_TOL = 1e-12


@dataclass
class SimDiag:
    """Simultaneous diagonalization: C^T A C = I, C^T B C = diag(eigs)."""

    basis: np.ndarray
    eigs: np.ndarray


def simultaneous_diagonalize(a, b):
    """Simultaneously diagonalize an SPD matrix a and a symmetric PSD matrix b.

    Implemented by Cholesky whitening of a followed by a symmetric
    eigendecomposition of the whitened b; the returned basis columns are the
    generalized eigenvectors of b with respect to a.
    """
    a = as_matrix(a, name="A")
    b = check_symmetric(as_matrix(b, name="B"), name="B")
    la = spd_cholesky(a, name="A")
    # whitened = La^-1 b La^-T
    half = solve_triangular(la, b, lower=True)
    whitened = symmetrize(solve_triangular(la, half.T, lower=True).T)
    eigs, vecs = np.linalg.eigh(whitened)
    basis = solve_triangular(la.T, vecs, lower=False)
    scale = max(1.0, float(np.abs(b).max()))
    assert np.abs(basis.T @ a @ basis - np.eye(a.shape[0])).max() < 1e-8
    assert np.abs(basis.T @ b @ basis - np.diag(eigs)).max() < 1e-8 * scale
    return SimDiag(basis=basis, eigs=eigs)


def _information_matrix(H, R):
    """H^T R^{-1} H, symmetrized."""
    H = as_matrix(H, name="H")
    rinv_h = cho_solve(cho_factor_checked(as_matrix(R, name="R"), name="R"), H)
    return symmetrize(H.T @ rinv_h)


def _inverse_spd(a, name):
    a = as_matrix(a, name=name)
    rf = cho_factor_checked(a, name=name)
    return symmetrize(cho_solve(rf, np.eye(a.shape[0])))


def lr_matrix_from_prior(sigma_minus, H, R, K):
    """Learning-rate matrix M whose K-step recursion reaches the posterior mode
    of the Gaussian prior N(., sigma_minus)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    precision = _inverse_spd(sigma_minus, "sigma_minus")
    sd = simultaneous_diagonalize(precision, _information_matrix(H, R))
    r = np.clip(sd.eigs, 0.0, None)
    tol = _EIG_TOL * max(1.0, float(r.max(initial=0.0)))
    safe_r = np.where(r > tol, r, 1.0)
    lam = np.where(r > tol, (1.0 - (1.0 + r) ** (-1.0 / K)) / safe_r, 1.0)
    return symmetrize(sd.basis @ (lam[:, None] * sd.basis.T))


def prior_from_lr_matrix(M, H, R, K):
    """Prior covariance implied by learning-rate matrix M and step count K.

    Raises ValueError when any generalized eigenvalue s_i >= 1: the implied
    prior variance would be undefined (the step is too large for any
    equivalent Gaussian prior).
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    m_inv = _inverse_spd(M, "M")
    sd = simultaneous_diagonalize(m_inv, _information_matrix(H, R))
    s = np.clip(sd.eigs, 0.0, None)
    if np.any(s >= 1.0):
        raise ValueError(
            f"step too large: no equivalent finite prior (max eigenvalue {s.max():.6g} >= 1)"
        )
    tol = _EIG_TOL * max(1.0, float(s.max(initial=0.0)))
    safe_s = np.where(s > tol, s, 1.0)
    sigma = np.where(s > tol, ((1.0 - s) ** (-float(K)) - 1.0) / safe_s, 1.0)
    return symmetrize(sd.basis @ (sigma[:, None] * sd.basis.T))


def santos_recursion(mu_minus, M, H, R, y, K):
    """K steps of mu <- mu + M H^T R^{-1} (y - H mu) from mu_minus."""
    if K < 1:
        raise ValueError("K must be >= 1")
    mu = as_vector(mu_minus, name="mu_minus")
    H = as_matrix(H, name="H")
    y = as_vector(y, dim=H.shape[0], name="y")
    gain = np.asarray(M, dtype=float) @ _half_information(H, R)
    for _ in range(K):
        mu = mu + gain @ (y - H @ mu)
    return mu


def _half_information(H, R):
    """M-independent factor H^T R^{-1}."""
    rinv_h = cho_solve(cho_factor_checked(as_matrix(R, name="R"), name="R"), as_matrix(H))
    return rinv_h.T


def ngd_vi_update(x, M, rho, H, R, y):
    """Fixed-covariance natural-gradient step x + rho * M H^T R^{-1} (y - Hx)."""
    return santos_recursion(x, rho * np.asarray(M, dtype=float), H, R, y, 1)


def compensated_prior(sigma_star, H, R_star):
    """Predictive covariance X with Kalman gain(X, R=I) = gain(sigma_star, R_star).

    X = sigma_star H^T (R_star)^{-1} (H^T)^+ with ^+ the Moore-Penrose inverse.
    """
    sigma_star = as_matrix(sigma_star, name="sigma_star")
    H = as_matrix(H, name="H")
    r_inv = _inverse_spd(as_matrix(R_star, name="R_star"), "R_star")
    return sigma_star @ H.T @ r_inv @ np.linalg.pinv(H.T)


def kalman_gain(sigma, H, R):
    """sigma H^T (H sigma H^T + R)^{-1}."""
    sigma = as_matrix(sigma, name="sigma")
    H = as_matrix(H, name="H")
    S = H @ sigma @ H.T + as_matrix(R, name="R")
    return np.linalg.solve(S.T, (sigma @ H.T).T).T


def kalman_posterior_mean(mu_minus, sigma_minus, H, R, y):
    """Closed-form Gaussian posterior mean mu + K (y - H mu)."""
    mu = as_vector(mu_minus, name="mu_minus")
    K = kalman_gain(sigma_minus, H, R)
    return mu + K @ (as_vector(y, name="y") - as_matrix(H) @ mu)


# ---------------------------------------------------------------------------
# Random instances and residual report (used by tests and the CLI)
# ---------------------------------------------------------------------------

def random_spd(rng, n, jitter=0.1):
    """Well-conditioned random SPD matrix W^T W + jitter * I."""
    w = rng.standard_normal((n, n))
    return w.T @ w + jitter * np.eye(n)


def _random_instance(rng, max_dim=5):
    n = int(rng.integers(1, max_dim + 1))
    m = int(rng.integers(1, max_dim + 1))
    return {
        "sigma_minus": random_spd(rng, n),
        "M": random_spd(rng, n),
        "H": rng.standard_normal((m, n)),
        "R": random_spd(rng, m),
        "y": rng.standard_normal(m),
        "mu_minus": rng.standard_normal(n),
        "K": int(rng.integers(1, 11)),
    }


def _rel_err(got, want):
    return float(np.max(np.abs(got - want)) / max(1.0, np.max(np.abs(want))))


def equivalence_report(seed=0, instances=200):
    """Max residuals of the forward/reverse equivalences and the gain identity.

    Returns a dict of residual names to max relative errors over ``instances``
    random instances.
    """
    rng = as_generator(seed)
    fwd = rev = gain = recon = 0.0
    for _ in range(instances):
        inst = _random_instance(rng)
        sp, H, R, y, mu, K = (
            inst["sigma_minus"], inst["H"], inst["R"], inst["y"], inst["mu_minus"], inst["K"],
        )
        # forward: M from the prior reproduces the Kalman mean
        M = lr_matrix_from_prior(sp, H, R, K)
        fwd = max(fwd, _rel_err(santos_recursion(mu, M, H, R, y, K),
                                kalman_posterior_mean(mu, sp, H, R, y)))
        # reverse: the implied prior reproduces the iterate (shrink M so s < 1)
        M2 = _shrink_to_valid(inst["M"], H, R)
        sigma = prior_from_lr_matrix(M2, H, R, K)
        rev = max(rev, _rel_err(kalman_posterior_mean(mu, sigma, H, R, y),
                                santos_recursion(mu, M2, H, R, y, K)))
        # compensated measurement noise: square invertible H
        n = sp.shape[0]
        Hs = rng.standard_normal((n, n)) + 0.5 * np.eye(n)
        Rs = random_spd(rng, n)
        X = compensated_prior(sp, Hs, Rs)
        gain = max(gain, _rel_err(kalman_gain(X, Hs, np.eye(n)), kalman_gain(sp, Hs, Rs)))
        sd = simultaneous_diagonalize(sp, _information_matrix(H, R))
        recon = max(recon, _rel_err(sd.basis.T @ sp @ sd.basis, np.eye(n)))
    return {
        "forward_equivalence": fwd,
        "reverse_equivalence": rev,
        "gain_identity": gain,
        "diagonalization": recon,
    }


def _shrink_to_valid(M, H, R, margin=0.7):
    """Scale M down until all generalized eigenvalues s_i <= margin.

    The reverse map is defined for all s_i < 1, but the implied prior variance
    grows like (1 - s)^{-K}, so instances too close to the boundary leave no
    float precision for 1e-8 comparisons; 0.7 keeps variances below ~2e5 for
    K <= 10.
    """
    s = simultaneous_diagonalize(_inverse_spd(M, "M"), _information_matrix(H, R)).eigs
    top = float(np.max(s, initial=0.0))
    if top < margin:
        return M
    return M * (margin / top)
