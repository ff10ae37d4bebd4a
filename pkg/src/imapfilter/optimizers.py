"""Gradient-history optimizers used by the implicit MAP update step.

Each optimizer is a stateless hyperparameter bundle (sklearn estimator
conventions); per-run accumulators live in an ``OptimizerState`` value that
``step`` maps functionally to its successor. ``step`` consumes the gradient of
the loss and returns the full additive update (descent sign included), so the
caller always applies ``x <- x + delta``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator

from .validation import check_positive, check_unit_open


@dataclass(frozen=True)
class OptimizerState:
    """Per-run accumulators: step count and moment buffers (zero at k=0)."""

    step_count: int = 0
    first_moment: np.ndarray | None = None
    second_moment: np.ndarray | None = None
    delta_accum: np.ndarray | None = None


class GradientOptimizer(BaseEstimator):
    kind = "base"

    def _validate(self):
        pass

    def init_state(self, dim):
        """Zero-initialized state for a parameter vector of length dim."""
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self._validate()
        return self._fresh_state(dim)

    def _fresh_state(self, dim):
        return OptimizerState()

    def step(self, state, grad):
        """One update: returns (next state, additive delta)."""
        raise NotImplementedError


class GradientDescent(GradientOptimizer):
    kind = "gd"

    def __init__(self, lr=0.1):
        self.lr = lr

    def _validate(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")

    def step(self, state, grad):
        return replace(state, step_count=state.step_count + 1), -self.lr * grad


class Adagrad(GradientOptimizer):
    kind = "adagrad"

    def __init__(self, lr=0.1, eps=1e-8):
        self.lr = lr
        self.eps = eps

    def _validate(self):
        check_positive(self.lr, "lr")
        check_positive(self.eps, "eps")

    def _fresh_state(self, dim):
        return OptimizerState(second_moment=np.zeros(dim))

    def step(self, state, grad):
        v = state.second_moment + grad * grad
        delta = -self.lr * grad / (np.sqrt(v) + self.eps)
        return replace(state, step_count=state.step_count + 1, second_moment=v), delta


class RMSprop(GradientOptimizer):
    kind = "rmsprop"

    def __init__(self, lr=0.1, gamma=0.9, eps=1e-8):
        self.lr = lr
        self.gamma = gamma
        self.eps = eps

    def _validate(self):
        check_positive(self.lr, "lr")
        check_unit_open(self.gamma, "gamma")
        check_positive(self.eps, "eps")

    def _fresh_state(self, dim):
        return OptimizerState(second_moment=np.zeros(dim))

    def step(self, state, grad):
        v = self.gamma * state.second_moment + (1.0 - self.gamma) * grad * grad
        delta = -self.lr * grad / (np.sqrt(v) + self.eps)
        return replace(state, step_count=state.step_count + 1, second_moment=v), delta


class Adam(GradientOptimizer):
    kind = "adam"

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def _validate(self):
        check_positive(self.lr, "lr")
        check_unit_open(self.beta1, "beta1")
        check_unit_open(self.beta2, "beta2")
        check_positive(self.eps, "eps")

    def _fresh_state(self, dim):
        return OptimizerState(first_moment=np.zeros(dim), second_moment=np.zeros(dim))

    def step(self, state, grad):
        k = state.step_count + 1
        m = self.beta1 * state.first_moment + (1.0 - self.beta1) * grad
        v = self.beta2 * state.second_moment + (1.0 - self.beta2) * grad * grad
        m_hat = m / (1.0 - self.beta1**k)
        v_hat = v / (1.0 - self.beta2**k)
        delta = -self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return replace(state, step_count=k, first_moment=m, second_moment=v), delta


class Adadelta(GradientOptimizer):
    kind = "adadelta"

    def __init__(self, gamma=0.9, eps=1e-6):
        self.gamma = gamma
        self.eps = eps

    def _validate(self):
        check_unit_open(self.gamma, "gamma")
        check_positive(self.eps, "eps")

    def _fresh_state(self, dim):
        return OptimizerState(second_moment=np.zeros(dim), delta_accum=np.zeros(dim))

    def step(self, state, grad):
        v = self.gamma * state.second_moment + (1.0 - self.gamma) * grad * grad
        delta = -np.sqrt(state.delta_accum + self.eps) / np.sqrt(v + self.eps) * grad
        u = self.gamma * state.delta_accum + (1.0 - self.gamma) * delta * delta
        return (
            replace(state, step_count=state.step_count + 1, second_moment=v, delta_accum=u),
            delta,
        )


class MatrixGradientDescent(GradientOptimizer):
    """Gradient descent preconditioned by a fixed learning-rate matrix."""

    kind = "matrix_gd"

    def __init__(self, matrix=None):
        self.matrix = matrix

    def _validate(self):
        if self.matrix is None:
            raise ValueError("matrix must be set")

    def step(self, state, grad):
        delta = -np.asarray(self.matrix, dtype=float) @ grad
        return replace(state, step_count=state.step_count + 1), delta


OPTIMIZER_KINDS = {
    cls.kind: cls for cls in (GradientDescent, Adagrad, RMSprop, Adam, Adadelta)
}


def optimizer_from_config(config):
    """Build an optimizer from ``{"kind": ..., <hyperparameters>}``."""
    config = dict(config)
    kind = config.pop("kind")
    if kind not in OPTIMIZER_KINDS:
        raise ValueError(f"unknown optimizer kind {kind!r}")
    return OPTIMIZER_KINDS[kind](**config)


def optimizer_to_config(opt):
    return {"kind": opt.kind, **opt.get_params()}
