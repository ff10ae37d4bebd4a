"""Common result types and the estimator base for all filters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator


class FilterDivergedError(RuntimeError):
    """A filter produced a non-finite state; carries the offending timestep."""

    def __init__(self, message, timestep=None):
        super().__init__(message)
        self.timestep = timestep


def fmt12(x):
    """Deterministic 12-significant-digit formatting used by every CSV writer."""
    return f"{float(x):.12g}"


@dataclass
class FilterRun:
    """Aligned per-timestep predictions (pre-update) and estimates (post-update).

    ``predictions[t]`` is the predicted mean before seeing observation t+1,
    ``estimates[t]`` the state estimate after the update.
    """

    predictions: np.ndarray
    estimates: np.ndarray
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.predictions = np.atleast_2d(np.asarray(self.predictions, dtype=float))
        self.estimates = np.atleast_2d(np.asarray(self.estimates, dtype=float))
        if self.predictions.shape != self.estimates.shape:
            raise ValueError("predictions and estimates must have equal shapes")

    def __len__(self):
        return self.estimates.shape[0]

    def to_csv(self, path):
        d = self.estimates.shape[1]
        header = (
            ["t"]
            + [f"mu_minus_{i + 1}" for i in range(d)]
            + [f"mu_hat_{i + 1}" for i in range(d)]
        )
        lines = [",".join(header)]
        for t in range(len(self)):
            row = [str(t + 1)]
            row += [fmt12(v) for v in self.predictions[t]]
            row += [fmt12(v) for v in self.estimates[t]]
            lines.append(",".join(row))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        d = (data.shape[1] - 1) // 2
        return cls(predictions=data[:, 1 : 1 + d], estimates=data[:, 1 + d :])


class SequenceFilter(BaseEstimator):
    """Base class for filtering methods.

    Subclasses store hyperparameters verbatim in ``__init__`` (sklearn
    convention, so ``get_params``/``set_params``/``clone`` compose) and
    implement ``run(model, observations, ...) -> FilterRun``.
    """

    def run(self, model, observations, **kwargs):
        raise NotImplementedError
