"""Filtering the weights of a small MLP through a drifting classification task.

The task is two unit-variance Gaussian clusters on a circle whose centers
rotate by ``omega`` radians per step; at every step a 32-example training
batch, a 16-example validation batch, and a 100-example test batch are drawn.
Five adaptation strategies share the same pretrained network and
per-step data splits: frozen weights, direct fit to convergence, implicit MAP
adaptation with a step-count grid, a particle filter over the weights, and a
variational Kalman filter (explicit random-walk prior, i.e. weight decay
toward the previous estimate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imap import imap_update
from .optimizers import Adam, GradientDescent
from .validation import as_generator, as_vector, check_positive

SIGMA2_GRID = (0.1, 0.05, 0.01, 0.005, 0.001)
IMAP_STEP_GRID = (1, 10, 25, 50, 100)


# ---------------------------------------------------------------------------
# Model: a 2 -> hidden -> 1 MLP on a flat weight vector
# ---------------------------------------------------------------------------

class MlpModel:
    """Rectifier-hidden, sigmoid-output MLP with flattened weights.

    The weight vector packs [W1 (hidden x in), b1, W2 (1 x hidden), b2];
    ``num_params`` = (in+1)*hidden + (hidden+1).
    """

    def __init__(self, in_dim=2, hidden=16):
        self.in_dim = in_dim
        self.hidden = hidden
        self.num_params = (in_dim + 1) * hidden + (hidden + 1)

    def unflatten(self, w):
        w = as_vector(w, dim=self.num_params, name="w")
        i, h = self.in_dim, self.hidden
        W1 = w[: i * h].reshape(h, i)
        b1 = w[i * h : i * h + h]
        W2 = w[i * h + h : i * h + h + h].reshape(1, h)
        b2 = w[-1:]
        return W1, b1, W2, b2

    def flatten(self, W1, b1, W2, b2):
        return np.concatenate([W1.ravel(), b1.ravel(), W2.ravel(), b2.ravel()])

    def init_weights(self, rng):
        rng = as_generator(rng)
        scale = 1.0 / math.sqrt(self.in_dim)
        W1 = rng.normal(0.0, scale, size=(self.hidden, self.in_dim))
        b1 = np.zeros(self.hidden)
        W2 = rng.normal(0.0, 1.0 / math.sqrt(self.hidden), size=(1, self.hidden))
        b2 = np.zeros(1)
        return self.flatten(W1, b1, W2, b2)

    def forward(self, w, X):
        """Per-row probability of class 1, in (0, 1)."""
        W1, b1, W2, b2 = self.unflatten(w)
        hidden = np.maximum(X @ W1.T + b1, 0.0)
        logits = hidden @ W2.ravel() + b2[0]
        return _sigmoid(logits)

    def forward_many(self, w_batch, X):
        """Probabilities for a batch of weight vectors: (P, n_examples)."""
        w_batch = np.atleast_2d(np.asarray(w_batch, dtype=float))
        i, h = self.in_dim, self.hidden
        W1 = w_batch[:, : i * h].reshape(-1, h, i)
        b1 = w_batch[:, i * h : i * h + h]
        W2 = w_batch[:, i * h + h : i * h + h + h]
        b2 = w_batch[:, -1]
        hidden = np.maximum(np.einsum("phi,ni->pnh", W1, X) + b1[:, None, :], 0.0)
        logits = np.einsum("pnh,ph->pn", hidden, W2) + b2[:, None]
        return _sigmoid(logits)

    def loss_grad(self, w, X, y):
        """Mean binary cross entropy and its exact gradient (reverse mode)."""
        W1, b1, W2, b2 = self.unflatten(w)
        pre = X @ W1.T + b1
        hidden = np.maximum(pre, 0.0)
        logits = hidden @ W2.ravel() + b2[0]
        p = _sigmoid(logits)
        p_safe = np.clip(p, 1e-12, 1.0 - 1e-12)
        n = X.shape[0]
        loss = -float(np.mean(y * np.log(p_safe) + (1.0 - y) * np.log(1.0 - p_safe)))
        dlogits = (p - y) / n
        dW2 = dlogits @ hidden
        db2 = np.array([dlogits.sum()])
        dhidden = np.outer(dlogits, W2.ravel())
        dhidden[pre <= 0.0] = 0.0
        dW1 = dhidden.T @ X
        db1 = dhidden.sum(axis=0)
        return loss, self.flatten(dW1, db1, dW2.reshape(1, -1), db2)

    def accuracy(self, w, X, y):
        return float(np.mean((self.forward(w, X) >= 0.5) == (y == 1)))


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def mlp_forward(model, w, X):
    return model.forward(w, X)


def mlp_loss_grad(model, w, X, y):
    return model.loss_grad(w, X, y)


# ---------------------------------------------------------------------------
# Drifting task
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DriftTask:
    """Two antipodal unit-variance clusters rotating by omega per step."""

    omega: float
    radius: float = 1.5
    train_size: int = 32
    test_size: int = 100
    val_size: int = 16
    horizon: int = 80

    def center(self, t):
        theta = self.omega * t
        return self.radius * np.array([math.cos(theta), math.sin(theta)])

    def _draw(self, t, size, rng):
        labels = (as_generator(rng).random(size) < 0.5).astype(float)
        center = self.center(t)
        signs = np.where(labels == 1.0, 1.0, -1.0)
        X = signs[:, None] * center + rng.standard_normal((size, 2))
        return X, labels


def drift_task_sample(task, t, rng):
    """Training and test splits for step t (labels by cluster)."""
    rng = as_generator(rng)
    X_train, y_train = task._draw(t, task.train_size, rng)
    X_test, y_test = task._draw(t, task.test_size, rng)
    return X_train, y_train, X_test, y_test


def drift_task_validation(task, t, rng):
    return task._draw(t, task.val_size, as_generator(rng))


# ---------------------------------------------------------------------------
# Per-step fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VkfConfig:
    """Transition variance plus the inner optimization budget."""

    sigma2: float
    steps: int = 1000
    lr: float = 1e-3

    def __post_init__(self):
        check_positive(self.sigma2, "sigma2")


def _anchored_loss(model, X, y, anchor, precision):
    """Mean BCE plus 0.5 * precision * ||w - anchor||^2 (precision 0 disables)."""

    def loss_grad(w):
        loss, grad = model.loss_grad(w, X, y)
        if precision != 0.0:
            diff = w - anchor
            loss = loss + 0.5 * precision * float(diff @ diff)
            grad = grad + precision * diff
        return loss, grad

    return loss_grad


def vkf_step(w_prev, batch, cfg, model):
    """Approximate argmin of mean BCE + (1/(2 n sigma^2)) ||w - w_prev||^2."""
    X, y = batch
    w_prev = as_vector(w_prev, dim=model.num_params, name="w_prev")
    precision = 1.0 / (X.shape[0] * cfg.sigma2)
    loss_grad = _anchored_loss(model, X, y, w_prev, precision)
    return imap_update(w_prev, loss_grad, Adam(lr=cfg.lr), cfg.steps)


def _imap_fit(w_prev, batch, model, steps, lr=1e-3):
    X, y = batch
    return imap_update(w_prev, _anchored_loss(model, X, y, w_prev, 0.0),
                       Adam(lr=lr), steps)


# ---------------------------------------------------------------------------
# Strategy runner
# ---------------------------------------------------------------------------

STRATEGIES = ("static", "direct_fit", "imap", "pf", "vkf")

DIRECT_FIT_STEPS = 1000
PRETRAIN_STEPS = 200
PRETRAIN_LR = 0.5


@dataclass
class AdaptationResult:
    accuracies: np.ndarray
    selected: str
    per_cell: dict = field(default_factory=dict)

    @property
    def mean_accuracy(self):
        return float(np.mean(self.accuracies))


def _step_data(task, seed):
    """Deterministic per-step splits shared by every strategy for a seed."""
    data = []
    for t in range(task.horizon):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0, t)))
        X_train, y_train, X_test, y_test = drift_task_sample(task, t, rng)
        X_val, y_val = drift_task_validation(task, t, rng)
        data.append((X_train, y_train, X_val, y_val, X_test, y_test))
    return data


def pretrain(task, model, seed):
    """200 plain gradient-descent steps on a dedicated draw from the t=0 task."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    w = model.init_weights(rng)
    X, y = task._draw(0, task.train_size, rng)
    return imap_update(w, _anchored_loss(model, X, y, w, 0.0),
                       GradientDescent(lr=PRETRAIN_LR), PRETRAIN_STEPS)


def _run_sequential(w0, data, model, fit, half=None):
    """Shared adaptation loop: fit(t, w, train batch) at every step.

    Returns per-step test accuracies and, when ``half`` is given, the mean
    validation accuracy over the first ``half`` steps.
    """
    w = w0
    accuracies = np.empty(len(data))
    val_scores = []
    for t, (X_train, y_train, X_val, y_val, X_test, y_test) in enumerate(data):
        if fit is not None:
            w = fit(t, w, (X_train, y_train))
        accuracies[t] = model.accuracy(w, X_test, y_test)
        if half is not None and t < half:
            val_scores.append(model.accuracy(w, X_val, y_val))
    val = float(np.mean(val_scores)) if val_scores else float("nan")
    return accuracies, val


def _pf_weights_run(w0, data, model, sigma2, n_particles, rng):
    """Bootstrap filter over the weight vector with random-walk proposals."""
    particles = np.tile(w0, (n_particles, 1))
    sd = math.sqrt(sigma2)
    accuracies = np.empty(len(data))
    val_scores = []
    for t, (X_train, y_train, X_val, y_val, X_test, y_test) in enumerate(data):
        particles = particles + sd * rng.standard_normal(particles.shape)
        probs = model.forward_many(particles, X_train)
        p_safe = np.clip(probs, 1e-12, 1.0 - 1e-12)
        loglik = (y_train * np.log(p_safe) + (1.0 - y_train) * np.log(1.0 - p_safe)).sum(axis=1)
        shifted = loglik - loglik.max()
        w = np.exp(shifted)
        total = w.sum()
        w = np.full(n_particles, 1.0 / n_particles) if total <= 0 else w / total
        estimate = w @ particles
        idx = rng.choice(n_particles, size=n_particles, p=w)
        particles = particles[idx]
        accuracies[t] = model.accuracy(estimate, X_test, y_test)
        if t < len(data) // 2:
            val_scores.append(model.accuracy(estimate, X_val, y_val))
    return accuracies, float(np.mean(val_scores))


def run_adaptation(strategy, task, model, seed, n_particles=1000,
                   imap_grid=IMAP_STEP_GRID, sigma2_grid=SIGMA2_GRID):
    """Run one adaptation strategy over the drift task.

    Grid strategies ("imap", "pf", "vkf") evaluate every cell, select by mean
    validation accuracy over the first half of the horizon, and report the
    selected cell's test accuracies. All strategies consume identical per-step
    data splits and the same pretrained weights for a given seed.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    data = _step_data(task, seed)
    w0 = pretrain(task, model, seed)
    half = task.horizon // 2

    if strategy == "static":
        acc, _ = _run_sequential(w0, data, model, fit=None)
        return AdaptationResult(accuracies=acc, selected="static")

    if strategy == "direct_fit":
        fit = lambda t, w, batch: _imap_fit(w, batch, model, DIRECT_FIT_STEPS)
        acc, _ = _run_sequential(w0, data, model, fit)
        return AdaptationResult(accuracies=acc, selected=f"direct_fit(K={DIRECT_FIT_STEPS})")

    if strategy == "imap":
        cells = {}
        for k in imap_grid:
            fit = lambda t, w, batch, k=k: _imap_fit(w, batch, model, k)
            acc, val = _run_sequential(w0, data, model, fit, half)
            cells[f"imap(K={k})"] = (val, acc)
        return _select(cells)

    if strategy == "vkf":
        cells = {}
        for sigma2 in sigma2_grid:
            cfg = VkfConfig(sigma2=sigma2)
            fit = lambda t, w, batch, cfg=cfg: vkf_step(w, batch, cfg, model)
            acc, val = _run_sequential(w0, data, model, fit, half)
            cells[f"vkf(sigma2={sigma2:g})"] = (val, acc)
        return _select(cells)

    # particle filter over weights
    cells = {}
    for sigma2 in sigma2_grid:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))
        acc, val = _pf_weights_run(w0, data, model, sigma2, n_particles, rng)
        cells[f"pf(sigma2={sigma2:g})"] = (val, acc)
    return _select(cells)


def _select(cells):
    best = max(cells.items(), key=lambda item: item[1][0])
    return AdaptationResult(
        accuracies=best[1][1],
        selected=best[0],
        per_cell={name: val for name, (val, _) in cells.items()},
    )
