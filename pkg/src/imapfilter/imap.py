"""Implicit MAP filtering: delta-method predict, K optimizer steps per update.

The update step consumes only a loss/gradient callable (the per-observation
negative log-likelihood); the prior is implied by the predict-step
initialization, the optimizer, and the step count. No covariance is formed or
propagated, and the update never reads the noise covariances -- for the
Gaussian benchmarks the loss is the unit-noise (mean-squared-error) form.
"""

from __future__ import annotations

import numpy as np

from .base import FilterDivergedError, FilterRun, SequenceFilter
from .validation import as_vector


def unit_gaussian_loss(model, y, t):
    """Loss/gradient of the observation under unit measurement noise.

    loss(x) = 0.5 * ||y - h(x)||^2 with gradient -H(x)^T (y - h(x)).
    """
    y = as_vector(y, name="y")

    def loss_grad(x):
        res = y - model.measurement_mean(x, t)
        return 0.5 * float(res @ res), -model.jacobian_H(x, t).T @ res

    return loss_grad


def imap_predict(model, mu_prev, t):
    """Delta-method predict: push the previous estimate through the transition."""
    return model.transition_mean(as_vector(mu_prev, dim=model.state_dim), t)


def imap_update(mu_minus, loss_grad, optimizer, steps, timestep=None):
    """K optimizer steps on the loss from the predicted mean; returns m^(K)."""
    estimate, _ = imap_update_stateful(
        mu_minus, loss_grad, optimizer, steps,
        state=optimizer.init_state(np.atleast_1d(np.asarray(mu_minus)).shape[0]),
        timestep=timestep,
    )
    return estimate


def imap_update_stateful(mu_minus, loss_grad, optimizer, steps, state, timestep=None):
    """As imap_update but threading optimizer state (for momentum carry-over)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    m = as_vector(mu_minus, name="mu_minus")
    label = "" if timestep is None else f" at timestep {timestep}"
    for k in range(steps):
        loss, grad = loss_grad(m)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise FilterDivergedError(
                f"filter diverged: non-finite loss/gradient{label}, iterate {k}",
                timestep=timestep,
            )
        state, delta = optimizer.step(state, grad)
        m = m + delta
    if not np.all(np.isfinite(m)):
        raise FilterDivergedError(
            f"filter diverged: non-finite state{label}", timestep=timestep
        )
    return m, state


class ImapFilter(SequenceFilter):
    """Implicit MAP filter over a state-space model.

    Parameters
    ----------
    optimizer : GradientOptimizer
        Update-step optimizer (gradient descent, Adam, ...).
    steps : int
        Number of optimizer iterations per timestep.
    reset_each_step : bool
        When True (default) the optimizer state is re-initialized at every
        timestep; when False moment buffers carry across timesteps.
    """

    def __init__(self, optimizer=None, steps=10, reset_each_step=True):
        self.optimizer = optimizer
        self.steps = steps
        self.reset_each_step = reset_each_step

    def run(self, model, observations, mu0=None):
        observations = np.atleast_2d(np.asarray(observations, dtype=float))
        if observations.shape[0] == 0:
            raise ValueError("observations must be nonempty")
        if self.optimizer is None:
            raise ValueError("optimizer must be set")
        mu = as_vector(model.initial_mean() if mu0 is None else mu0, dim=model.state_dim)
        predictions = np.empty((observations.shape[0], model.state_dim))
        estimates = np.empty_like(predictions)
        state = self.optimizer.init_state(model.state_dim)
        for t in range(1, observations.shape[0] + 1):
            mu_minus = imap_predict(model, mu, t)
            if self.reset_each_step:
                state = self.optimizer.init_state(model.state_dim)
            mu, state = imap_update_stateful(
                mu_minus,
                unit_gaussian_loss(model, observations[t - 1], t),
                self.optimizer,
                self.steps,
                state,
                timestep=t,
            )
            predictions[t - 1] = mu_minus
            estimates[t - 1] = mu
        return FilterRun(predictions=predictions, estimates=estimates)


# An implicit MAP run serializes exactly like any other filter run.
ImapRun = FilterRun
