"""State-space models, numerical integrators, and trajectory simulation.

Three benchmark systems are provided:

* ``LinearGaussianModel`` -- arbitrary linear-Gaussian dynamics/measurements.
* ``UngmModel`` -- the univariate nonlinear growth model with quadratic
  measurements (even in the state, hence bimodal filtering distributions).
* ``LorenzModel`` -- a stochastic Lorenz '63 system. Ground truth is simulated
  by fine Euler-Maruyama refinement; the model's *assumed* dynamics (what the
  filters see) is one RK4 step, one Euler step, or a random walk, so the
  dynamics can be deliberately misspecified.

Model methods accept a single state of shape ``(d,)`` or a batch ``(n, d)``
wherever that is meaningful (transitions, measurements, log-likelihoods);
Jacobians are single-state only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .validation import (
    as_generator,
    as_matrix,
    as_vector,
    check_positive,
    check_psd,
    check_spd,
    cho_factor_checked,
    psd_factor,
)


# ---------------------------------------------------------------------------
# Integrators
# ---------------------------------------------------------------------------

def step_euler(drift, x, dt):
    """One explicit Euler step of size dt: x + dt * drift(x)."""
    x = np.asarray(x, dtype=float)
    return x + dt * drift(x)


def step_rk4(drift, x, dt):
    """One classical fourth-order Runge-Kutta step on the deterministic drift."""
    x = np.asarray(x, dtype=float)
    k1 = drift(x)
    k2 = drift(x + 0.5 * dt * k1)
    k3 = drift(x + 0.5 * dt * k2)
    k4 = drift(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_euler_maruyama(drift, x, dt, substeps, alpha, rng=None):
    """Advance x by time dt with ``substeps`` Euler-Maruyama inner steps.

    Each inner step of size h = dt/substeps applies
    x <- x + h*drift(x) + alpha*sqrt(h)*xi with xi ~ N(0, I). The full noise
    block is drawn up front in a single RNG call, so results are a pure
    function of (drift, x, dt, substeps, alpha, seed).
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x = np.asarray(x, dtype=float)
    h = dt / substeps
    if alpha == 0.0:
        for _ in range(substeps):
            x = x + h * drift(x)
        return x
    rng = as_generator(rng)
    noise = rng.standard_normal((substeps,) + x.shape) * (alpha * math.sqrt(h))
    for k in range(substeps):
        x = x + h * drift(x) + noise[k]
    return x


# ---------------------------------------------------------------------------
# Benchmark dynamics
# ---------------------------------------------------------------------------

def ungm_transition_mean(x, t, dt=0.1):
    """Deterministic part of the univariate nonlinear growth transition.

    0.5*x + 25*x/(1 + x^2) + 8*cos(1.2*t*dt); t is the index of the state
    being produced.
    """
    x = np.asarray(x, dtype=float)
    return 0.5 * x + 25.0 * x / (1.0 + x * x) + 8.0 * math.cos(1.2 * t * dt)


def ungm_measurement_mean(x):
    """Quadratic measurement x^2 / 20 (even in x)."""
    x = np.asarray(x, dtype=float)
    return x * x / 20.0


def lorenz_drift(x, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    """Lorenz '63 drift field; x has shape (3,) or (n, 3)."""
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack(
        [sigma * (x2 - x1), x1 * (rho - x3) - x2, x1 * x2 - beta * x3], axis=-1
    )


def lorenz_drift_jacobian(x, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x
    return np.array(
        [
            [-sigma, sigma, 0.0],
            [rho - x3, -1.0, -x1],
            [x2, x1, -beta],
        ]
    )


def gaussian_neg_loglik(y, hx, Hx, R):
    """Gaussian negative log-likelihood (constants dropped) and its gradient.

    Returns 0.5 * ||y - h(x)||^2_R and -Hx^T R^{-1} (y - h(x)), where Hx is
    the measurement Jacobian at the evaluation point; for nonlinear h this is
    the exact gradient.
    """
    y = as_vector(y, name="y")
    hx = as_vector(hx, dim=y.shape[0], name="hx")
    Hx = as_matrix(Hx, name="Hx")
    R = check_spd(as_matrix(R, name="R"), name="R")
    res = y - hx
    z = cho_solve(cho_factor_checked(R, name="R"), res)
    loss = 0.5 * float(res @ z)
    grad = -Hx.T @ z
    return loss, grad


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Aligned times, ground-truth states, and observations of equal length."""

    times: np.ndarray
    states: np.ndarray
    observations: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=float))
        T = self.times.shape[0]
        if self.states.shape[0] != T or self.observations.shape[0] != T:
            raise ValueError("times, states, observations must have equal length")
        if T > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return self.times.shape[0]

    def to_csv(self, path):
        from .base import fmt12

        d = self.states.shape[1]
        m = self.observations.shape[1]
        header = ["t"] + [f"x_{i + 1}" for i in range(d)] + [f"y_{j + 1}" for j in range(m)]
        lines = [",".join(header)]
        for k in range(len(self)):
            row = [fmt12(self.times[k])]
            row += [fmt12(v) for v in self.states[k]]
            row += [fmt12(v) for v in self.observations[k]]
            lines.append(",".join(row))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        d = sum(1 for name in header if name.startswith("x_"))
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(
            times=data[:, 0],
            states=data[:, 1 : 1 + d],
            observations=data[:, 1 + d :],
        )


# ---------------------------------------------------------------------------
# Model contract
# ---------------------------------------------------------------------------

class StateSpaceModel:
    """Contract every benchmark system implements.

    Subclasses define dimensions, the initial Gaussian, the transition and
    measurement functions with their Jacobians, and the noise covariances.
    Models are immutable after construction; all randomness flows through the
    ``rng`` arguments.
    """

    state_dim: int
    obs_dim: int
    dt: float = 1.0

    def initial_mean(self):
        raise NotImplementedError

    def initial_cov(self):
        raise NotImplementedError

    def transition_mean(self, x, t):
        raise NotImplementedError

    def measurement_mean(self, x, t):
        raise NotImplementedError

    def jacobian_F(self, x, t):
        raise NotImplementedError

    def jacobian_H(self, x, t):
        raise NotImplementedError

    def process_cov(self, t):
        raise NotImplementedError

    def measurement_cov(self, t):
        raise NotImplementedError

    # -- sampling ----------------------------------------------------------

    def transition_sample(self, x, t, rng):
        """Sample from the model's assumed transition distribution."""
        mean = self.transition_mean(x, t)
        L = self._process_chol(t)
        noise = as_generator(rng).standard_normal(mean.shape)
        return mean + noise @ L.T

    def truth_sample(self, x, t, rng):
        """Sample from the data-generating transition.

        Defaults to ``transition_sample``; models whose assumed dynamics are a
        misspecification of the true system override this.
        """
        return self.transition_sample(x, t, rng)

    def measurement_sample(self, x, t, rng):
        mean = self.measurement_mean(x, t)
        L = self._measurement_chol(t)
        noise = as_generator(rng).standard_normal(mean.shape)
        return mean + noise @ L.T

    def initial_sample(self, rng):
        L = psd_factor(self.initial_cov(), name="initial_cov")
        return self.initial_mean() + L @ as_generator(rng).standard_normal(self.state_dim)

    # -- likelihood --------------------------------------------------------

    def neg_loglik(self, x, y, t):
        """0.5 * ||y - h(x)||^2_R; batched over leading axes of x."""
        res = np.asarray(y, dtype=float) - self.measurement_mean(x, t)
        res2d = np.atleast_2d(res)
        z = cho_solve(cho_factor_checked(self.measurement_cov(t), name="R"), res2d.T).T
        nll = 0.5 * np.einsum("...i,...i->...", res2d, z)
        return float(nll[0]) if np.ndim(res) == 1 else nll

    def grad_neg_loglik(self, x, y, t):
        res = np.asarray(y, dtype=float) - self.measurement_mean(x, t)
        z = cho_solve(cho_factor_checked(self.measurement_cov(t), name="R"), res)
        return -self.jacobian_H(x, t).T @ z

    # -- internal ----------------------------------------------------------

    def _process_chol(self, t):
        return psd_factor(self.process_cov(t), name="Q")

    def _measurement_chol(self, t):
        return psd_factor(self.measurement_cov(t), name="R")


class LinearGaussianModel(StateSpaceModel):
    """x_t = F x_{t-1} + q,  y_t = H x_t + r with Gaussian q, r."""

    def __init__(self, F, Q, H, R, mu0=None, Sigma0=None, dt=1.0):
        self.F = as_matrix(F, name="F")
        self.state_dim = self.F.shape[0]
        self.H = as_matrix(H, name="H")
        self.obs_dim = self.H.shape[0]
        self.Q = check_psd(as_matrix(Q, shape=(self.state_dim, self.state_dim), name="Q"))
        self.R = check_psd(as_matrix(R, shape=(self.obs_dim, self.obs_dim), name="R"))
        self.mu0 = as_vector(
            np.zeros(self.state_dim) if mu0 is None else mu0, dim=self.state_dim, name="mu0"
        )
        self.Sigma0 = check_psd(
            as_matrix(
                np.eye(self.state_dim) if Sigma0 is None else Sigma0,
                shape=(self.state_dim, self.state_dim),
                name="Sigma0",
            )
        )
        self.dt = dt

    def initial_mean(self):
        return self.mu0.copy()

    def initial_cov(self):
        return self.Sigma0.copy()

    def transition_mean(self, x, t):
        return np.asarray(x, dtype=float) @ self.F.T

    def measurement_mean(self, x, t):
        return np.asarray(x, dtype=float) @ self.H.T

    def jacobian_F(self, x, t):
        return self.F.copy()

    def jacobian_H(self, x, t):
        return self.H.copy()

    def process_cov(self, t):
        return self.Q.copy()

    def measurement_cov(self, t):
        return self.R.copy()


class UngmModel(StateSpaceModel):
    """Univariate nonlinear growth model with y = x^2/20 measurements."""

    state_dim = 1
    obs_dim = 1

    def __init__(self, q=3.0, r=2.0, dt=0.1):
        self.q = check_positive(float(q), "q")
        self.r = check_positive(float(r), "r")
        self.dt = check_positive(float(dt), "dt")

    def initial_mean(self):
        return np.zeros(1)

    def initial_cov(self):
        return np.eye(1)

    def transition_mean(self, x, t):
        return ungm_transition_mean(np.asarray(x, dtype=float), t, self.dt)

    def measurement_mean(self, x, t):
        return ungm_measurement_mean(np.asarray(x, dtype=float))

    def jacobian_F(self, x, t):
        x0 = float(np.asarray(x).reshape(-1)[0])
        d = 0.5 + 25.0 * (1.0 - x0 * x0) / (1.0 + x0 * x0) ** 2
        return np.array([[d]])

    def jacobian_H(self, x, t):
        x0 = float(np.asarray(x).reshape(-1)[0])
        return np.array([[x0 / 10.0]])

    def process_cov(self, t):
        return np.array([[self.q]])

    def measurement_cov(self, t):
        return np.array([[self.r]])


@dataclass(frozen=True)
class LorenzConfig:
    """Parameters of the stochastic Lorenz '63 benchmark."""

    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    alpha: float = 10.0
    dt: float = 0.02
    substeps: int = 1000
    obs_noise: float = 2.0

    def __post_init__(self):
        check_positive(self.alpha, "alpha")
        check_positive(self.dt, "dt")
        check_positive(self.obs_noise, "obs_noise")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


LORENZ_DYNAMICS = ("rk4", "euler", "grw")


class LorenzModel(StateSpaceModel):
    """Stochastic Lorenz '63 with selectable assumed dynamics.

    Ground truth (``truth_sample``) always refines each measurement interval
    with ``config.substeps`` Euler-Maruyama steps. The assumed transition used
    by the filters is one RK4 step ("rk4"), one Euler step ("euler"), or the
    identity ("grw"); the discrete process noise is Q = alpha^2 * dt * I.
    """

    state_dim = 3
    obs_dim = 3

    def __init__(self, config=None, dynamics="rk4"):
        self.config = config if config is not None else LorenzConfig()
        if dynamics not in LORENZ_DYNAMICS:
            raise ValueError(f"dynamics must be one of {LORENZ_DYNAMICS}, got {dynamics!r}")
        self.dynamics = dynamics
        self.dt = self.config.dt

    def drift(self, x):
        c = self.config
        return lorenz_drift(x, sigma=c.sigma, rho=c.rho, beta=c.beta)

    def drift_jacobian(self, x):
        c = self.config
        return lorenz_drift_jacobian(x, sigma=c.sigma, rho=c.rho, beta=c.beta)

    def initial_mean(self):
        return np.array([10.0, 10.0, 10.0])

    def initial_cov(self):
        return np.eye(3)

    def transition_mean(self, x, t):
        x = np.asarray(x, dtype=float)
        if self.dynamics == "rk4":
            return step_rk4(self.drift, x, self.dt)
        if self.dynamics == "euler":
            return step_euler(self.drift, x, self.dt)
        return x.copy()

    def measurement_mean(self, x, t):
        return np.asarray(x, dtype=float).copy()

    def jacobian_F(self, x, t):
        x = as_vector(x, dim=3, name="x")
        h = self.dt
        eye = np.eye(3)
        if self.dynamics == "grw":
            return eye
        if self.dynamics == "euler":
            return eye + h * self.drift_jacobian(x)
        # forward-mode derivative of the RK4 step
        k1 = self.drift(x)
        A1 = self.drift_jacobian(x)
        x2 = x + 0.5 * h * k1
        k2 = self.drift(x2)
        A2 = self.drift_jacobian(x2) @ (eye + 0.5 * h * A1)
        x3 = x + 0.5 * h * k2
        k3 = self.drift(x3)
        A3 = self.drift_jacobian(x3) @ (eye + 0.5 * h * A2)
        x4 = x + h * k3
        A4 = self.drift_jacobian(x4) @ (eye + h * A3)
        return eye + (h / 6.0) * (A1 + 2.0 * A2 + 2.0 * A3 + A4)

    def jacobian_H(self, x, t):
        return np.eye(3)

    def process_cov(self, t):
        c = self.config
        return (c.alpha**2 * c.dt) * np.eye(3)

    def measurement_cov(self, t):
        return self.config.obs_noise * np.eye(3)

    def truth_sample(self, x, t, rng):
        c = self.config
        return step_euler_maruyama(self.drift, x, c.dt, c.substeps, c.alpha, rng)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def simulate(model, num_steps, rng):
    """Simulate a ground-truth trajectory and its observations.

    Draws x_0 from the initial distribution, then for t = 1..num_steps samples
    x_t from the true transition and y_t from the measurement distribution.
    Pure function of (model parameters, num_steps, seed).
    """
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    rng = as_generator(rng)
    x = model.initial_sample(rng)
    states = np.empty((num_steps, model.state_dim))
    observations = np.empty((num_steps, model.obs_dim))
    for t in range(1, num_steps + 1):
        x = model.truth_sample(x, t, rng)
        states[t - 1] = x
        observations[t - 1] = model.measurement_sample(x, t, rng)
    times = model.dt * np.arange(1, num_steps + 1)
    return Trajectory(times=times, states=states, observations=observations)
