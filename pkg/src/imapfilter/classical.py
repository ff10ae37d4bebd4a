"""Classical Bayesian filters: Kalman, EKF, iterated EKF, UKF, bootstrap PF.

The step functions are pure transitions on explicit belief values; the
estimator classes wrap them into ``run(model, observations)`` loops that all
start from the model's initial mean and covariance. Covariances are
symmetrized after every update, and innovation solves go through Cholesky
factorizations rather than explicit inversion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .base import FilterDivergedError, FilterRun, SequenceFilter
from .validation import (
    as_generator,
    as_matrix,
    as_vector,
    chol_with_jitter,
    cho_factor_checked,
    symmetrize,
)


@dataclass
class GaussianBelief:
    """Gaussian filtering (or predictive) distribution: mean and covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = as_vector(self.mean, name="mean")
        self.cov = as_matrix(self.cov, shape=(self.mean.size, self.mean.size), name="cov")


def _gaussian_update(mu_minus, cov_minus, H, R, innovation):
    """Shared Kalman update given a predicted belief and an innovation."""
    S = H @ cov_minus @ H.T + R
    sf = cho_factor_checked(S, name="innovation covariance")
    K = cho_solve(sf, (cov_minus @ H.T).T).T
    mean = mu_minus + K @ innovation
    cov = symmetrize(cov_minus - K @ S @ K.T)
    return mean, cov


def kf_step(belief, F, Q, H, R, y):
    """One linear-Gaussian predict/update cycle."""
    F = as_matrix(F, name="F")
    H = as_matrix(H, name="H")
    mu_minus = F @ belief.mean
    cov_minus = symmetrize(F @ belief.cov @ F.T + as_matrix(Q, name="Q"))
    y = as_vector(y, dim=H.shape[0], name="y")
    mean, cov = _gaussian_update(mu_minus, cov_minus, H, as_matrix(R, name="R"),
                                 y - H @ mu_minus)
    return GaussianBelief(mean=mean, cov=cov)


def ekf_predict(belief, model, t, process_cov=None):
    F = model.jacobian_F(belief.mean, t)
    mu_minus = model.transition_mean(belief.mean, t)
    Q = model.process_cov(t) if process_cov is None else process_cov
    cov_minus = symmetrize(F @ belief.cov @ F.T + Q)
    return GaussianBelief(mean=mu_minus, cov=cov_minus)


def ekf_step(belief, model, y, t, process_cov=None):
    """EKF cycle: first-order linearization around the running estimates."""
    pred = ekf_predict(belief, model, t, process_cov)
    H = model.jacobian_H(pred.mean, t)
    v = as_vector(y, dim=model.obs_dim) - model.measurement_mean(pred.mean, t)
    mean, cov = _gaussian_update(pred.mean, pred.cov, H, model.measurement_cov(t), v)
    if not np.all(np.isfinite(mean)):
        raise FilterDivergedError(f"EKF produced non-finite mean at timestep {t}", t)
    return GaussianBelief(mean=mean, cov=cov)


def iekf_update(belief_minus, model, y, t, iterations):
    """Iterated EKF update: relinearize around the running iterate.

    Innovation at iterate i uses y - h(x) - H(x)(mu_minus - x); the final
    covariance comes from the last gain.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    y = as_vector(y, dim=model.obs_dim, name="y")
    mu_minus, cov_minus = belief_minus.mean, belief_minus.cov
    R = model.measurement_cov(t)
    x = mu_minus.copy()
    K = S = None
    for _ in range(iterations):
        H = model.jacobian_H(x, t)
        v = y - model.measurement_mean(x, t) - H @ (mu_minus - x)
        S = H @ cov_minus @ H.T + R
        sf = cho_factor_checked(S, name="innovation covariance")
        K = cho_solve(sf, (cov_minus @ H.T).T).T
        x = mu_minus + K @ v
        if not np.all(np.isfinite(x)):
            raise FilterDivergedError(f"IEKF produced non-finite mean at timestep {t}", t)
    cov = symmetrize(cov_minus - K @ S @ K.T)
    return GaussianBelief(mean=x, cov=cov)


# ---------------------------------------------------------------------------
# Unscented transform
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UkfParams:
    """Sigma-point spread parameters; beta defaults to 3 - n at resolve time."""

    alpha: float = 1.0
    beta: float | None = None

    def resolve(self, n):
        beta = (3.0 - n) if self.beta is None else self.beta
        lam = self.alpha**2 * (n + beta) - n
        if n + lam <= 0:
            raise ValueError(f"n + lambda must be positive, got {n + lam}")
        return beta, lam


def ukf_sigma_points(mean, cov, params=UkfParams()):
    """2n+1 sigma points with mean and covariance weights.

    Central weights follow lambda/(n+lambda) (plus the 1 - alpha^2 + beta
    covariance correction); off-center weights are 1/(2(n+lambda)).
    """
    mean = as_vector(mean, name="mean")
    n = mean.size
    beta, lam = params.resolve(n)
    L = chol_with_jitter(as_matrix(cov, shape=(n, n), name="cov"), name="cov")
    spread = np.sqrt(n + lam) * L
    points = np.empty((2 * n + 1, n))
    points[0] = mean
    points[1 : n + 1] = mean + spread.T
    points[n + 1 :] = mean - spread.T
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = lam / (n + lam) + (1.0 - params.alpha**2 + beta)
    return points, wm, wc


def _unscented_moments(points, wm, wc, noise_cov):
    mean = wm @ points
    diffs = points - mean
    cov = symmetrize((diffs * wc[:, None]).T @ diffs + noise_cov)
    return mean, diffs, cov


def ukf_step(belief, model, y, t, params=UkfParams(), process_cov=None):
    """Unscented predict/update: sigma points through f, fresh points through h."""
    Q = model.process_cov(t) if process_cov is None else process_cov
    points, wm, wc = ukf_sigma_points(belief.mean, belief.cov, params)
    propagated = model.transition_mean(points, t)
    mu_minus, _, cov_minus = _unscented_moments(propagated, wm, wc, Q)

    fresh, wm, wc = ukf_sigma_points(mu_minus, cov_minus, params)
    predicted_obs = model.measurement_mean(fresh, t)
    m, obs_diffs, S = _unscented_moments(predicted_obs, wm, wc, model.measurement_cov(t))
    state_diffs = fresh - mu_minus
    C = (state_diffs * wc[:, None]).T @ obs_diffs

    sf = cho_factor_checked(S, name="innovation covariance")
    K = cho_solve(sf, C.T).T
    v = as_vector(y, dim=model.obs_dim) - m
    mean = mu_minus + K @ v
    cov = symmetrize(cov_minus - K @ S @ K.T)
    if not np.all(np.isfinite(mean)):
        raise FilterDivergedError(f"UKF produced non-finite mean at timestep {t}", t)
    return GaussianBelief(mean=mean, cov=cov)


# ---------------------------------------------------------------------------
# Bootstrap particle filter
# ---------------------------------------------------------------------------

@dataclass
class ParticleSet:
    """Weighted state samples; weights are kept normalized."""

    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        self.weights = as_vector(self.weights, dim=self.particles.shape[0], name="weights")

    @property
    def n(self):
        return self.particles.shape[0]

    @classmethod
    def from_prior(cls, model, n, rng):
        rng = as_generator(rng)
        L = np.linalg.cholesky(model.initial_cov())
        particles = model.initial_mean() + rng.standard_normal((n, model.state_dim)) @ L.T
        return cls(particles=particles, weights=np.full(n, 1.0 / n))


def pf_weights(particles, model, y, t):
    """Normalized likelihood weights in log space.

    Returns (weights, degenerate); on total underflow the weights reset to
    uniform and degenerate is True.
    """
    loglik = -model.neg_loglik(particles, y, t)
    loglik = np.atleast_1d(loglik)
    finite = np.isfinite(loglik)
    if not finite.any():
        return np.full(particles.shape[0], 1.0 / particles.shape[0]), True
    shifted = np.where(finite, loglik - loglik[finite].max(), -np.inf)
    w = np.exp(shifted)
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0:
        return np.full(particles.shape[0], 1.0 / particles.shape[0]), True
    return w / total, False


def multinomial_resample(particles, weights, rng):
    idx = as_generator(rng).choice(particles.shape[0], size=particles.shape[0], p=weights)
    return particles[idx]


def pf_step(ps, model, y, t, rng):
    """One bootstrap cycle: propagate, weight, estimate, multinomial resample.

    The mean estimate is the weighted mean before resampling. Returns
    (resampled particle set, mean estimate, degenerate flag).
    """
    rng = as_generator(rng)
    propagated = model.transition_sample(ps.particles, t, rng)
    weights, degenerate = pf_weights(propagated, model, y, t)
    mean = weights @ propagated
    resampled = multinomial_resample(propagated, weights, rng)
    uniform = np.full(ps.n, 1.0 / ps.n)
    return ParticleSet(particles=resampled, weights=uniform), mean, degenerate


# ---------------------------------------------------------------------------
# Estimator wrappers
# ---------------------------------------------------------------------------

class _BeliefFilter(SequenceFilter):
    """Shared run loop for Gaussian-belief filters."""

    def _step(self, belief, model, y, t):
        raise NotImplementedError

    def run(self, model, observations, **_):
        observations = np.atleast_2d(np.asarray(observations, dtype=float))
        belief = GaussianBelief(mean=model.initial_mean(), cov=model.initial_cov())
        predictions = np.empty((observations.shape[0], model.state_dim))
        estimates = np.empty_like(predictions)
        for t in range(1, observations.shape[0] + 1):
            predictions[t - 1] = model.transition_mean(belief.mean, t)
            belief = self._step(belief, model, observations[t - 1], t)
            estimates[t - 1] = belief.mean
        return FilterRun(predictions=predictions, estimates=estimates)


class KalmanFilter(_BeliefFilter):
    """Exact filter for linear-Gaussian models (F, H read from the model)."""

    def __init__(self, process_cov=None):
        self.process_cov = process_cov

    def _step(self, belief, model, y, t):
        Q = model.process_cov(t) if self.process_cov is None else self.process_cov
        return kf_step(belief, model.jacobian_F(belief.mean, t), Q,
                       model.jacobian_H(belief.mean, t), model.measurement_cov(t), y)


class ExtendedKalmanFilter(_BeliefFilter):
    def __init__(self, process_cov=None):
        self.process_cov = process_cov

    def _step(self, belief, model, y, t):
        return ekf_step(belief, model, y, t, self.process_cov)


class IteratedEKF(_BeliefFilter):
    def __init__(self, iterations=5, process_cov=None):
        self.iterations = iterations
        self.process_cov = process_cov

    def _step(self, belief, model, y, t):
        pred = ekf_predict(belief, model, t, self.process_cov)
        return iekf_update(pred, model, y, t, self.iterations)


class UnscentedKalmanFilter(_BeliefFilter):
    def __init__(self, alpha=1.0, beta=None, process_cov=None):
        self.alpha = alpha
        self.beta = beta
        self.process_cov = process_cov

    def _step(self, belief, model, y, t):
        params = UkfParams(alpha=self.alpha, beta=self.beta)
        return ukf_step(belief, model, y, t, params, self.process_cov)


class BootstrapParticleFilter(SequenceFilter):
    """Bootstrap filter with multinomial resampling at every time step."""

    def __init__(self, n_particles=1000):
        self.n_particles = n_particles

    def run(self, model, observations, rng=None):
        rng = as_generator(rng)
        observations = np.atleast_2d(np.asarray(observations, dtype=float))
        ps = ParticleSet.from_prior(model, self.n_particles, rng)
        predictions = np.empty((observations.shape[0], model.state_dim))
        estimates = np.empty_like(predictions)
        degenerate_steps = []
        for t in range(1, observations.shape[0] + 1):
            propagated = model.transition_sample(ps.particles, t, rng)
            weights, degenerate = pf_weights(propagated, model, observations[t - 1], t)
            if degenerate:
                degenerate_steps.append(t)
            predictions[t - 1] = propagated.mean(axis=0)
            estimates[t - 1] = weights @ propagated
            resampled = multinomial_resample(propagated, weights, rng)
            ps = ParticleSet(particles=resampled, weights=np.full(ps.n, 1.0 / ps.n))
        return FilterRun(predictions=predictions, estimates=estimates,
                         extra={"degenerate_steps": degenerate_steps})
