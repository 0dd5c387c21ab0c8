"""Convex model families: losses, exact gradients, smoothness bounds.

Two tasks are supported: multinomial logistic regression and linear
least squares.  Model parameters travel as one flat float64 vector so a
single exchange format serves every algorithm; for the logistic model
the layout is class-major weights followed by the per-class biases,
``w = [W.ravel(), b]`` with ``W`` of shape ``(C, d_in)``.

Losses are per-sample means (not sums) plus an optional L2 term
``lambda_reg * ||w||^2 / 2`` over the full parameter vector, so the
size-weighted average of device losses equals the global mean loss.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, NumericalError

MULTINOMIAL_LOGISTIC = "multinomial-logistic"
LINEAR_REGRESSION = "linear-regression"

TASKS = (MULTINOMIAL_LOGISTIC, LINEAR_REGRESSION)


@dataclass(frozen=True)
class DeviceDataset:
    """One device's local samples: features, labels and an id."""

    features: np.ndarray
    labels: np.ndarray
    device_id: int = 0

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        y = np.asarray(self.labels)
        if X.ndim != 2:
            raise ConfigurationError("features must be a 2-d matrix (n_k, d_in)")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ConfigurationError(
                f"device {self.device_id}: {X.shape[0]} feature rows but {y.shape[0]} labels"
            )
        if X.shape[0] < 1:
            raise DataError(f"device {self.device_id}: at least one sample required")
        if not np.all(np.isfinite(X)):
            raise NumericalError(f"device {self.device_id}: non-finite feature values")
        if np.issubdtype(y.dtype, np.integer):
            y = np.ascontiguousarray(y, dtype=np.int64)
        else:
            y = np.ascontiguousarray(y, dtype=np.float64)
            if not np.all(np.isfinite(y)):
                raise NumericalError(f"device {self.device_id}: non-finite labels")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Objective:
    """A model family over a fixed input dimension.

    ``num_classes`` is only meaningful for classification; for linear
    regression the parameter vector is simply the ``d_in`` weights.
    """

    task: str
    input_dim: int
    num_classes: int = 0
    lambda_reg: float = 0.0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigurationError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.input_dim < 1:
            raise ConfigurationError("input_dim must be >= 1")
        if self.task == MULTINOMIAL_LOGISTIC and self.num_classes < 2:
            raise ConfigurationError("classification needs num_classes >= 2")
        if self.lambda_reg < 0:
            raise ConfigurationError("lambda_reg must be >= 0")

    @property
    def num_params(self) -> int:
        if self.task == MULTINOMIAL_LOGISTIC:
            return self.num_classes * self.input_dim + self.num_classes
        return self.input_dim

    def init_params(self) -> np.ndarray:
        """The conventional all-zero starting point."""
        return np.zeros(self.num_params)

    def split(self, w: np.ndarray):
        """Views (W, b) into a flat logistic parameter vector."""
        C, D = self.num_classes, self.input_dim
        return w[: C * D].reshape(C, D), w[C * D :]

    # -- checks -------------------------------------------------------

    def _check(self, w: np.ndarray, data: DeviceDataset):
        if w.shape != (self.num_params,):
            raise ConfigurationError(
                f"parameter vector has length {w.shape}, expected ({self.num_params},)"
            )
        if data.input_dim != self.input_dim:
            raise ConfigurationError(
                f"device {data.device_id} has input_dim {data.input_dim}, objective expects {self.input_dim}"
            )
        if self.task == MULTINOMIAL_LOGISTIC:
            y = data.labels
            if not np.issubdtype(y.dtype, np.integer):
                raise ConfigurationError("classification labels must be integers")
            if y.min() < 0 or y.max() >= self.num_classes:
                raise ConfigurationError(
                    f"labels outside [0, {self.num_classes}) on device {data.device_id}"
                )

    # -- loss / gradients ---------------------------------------------

    def loss(self, w: np.ndarray, data: DeviceDataset) -> float:
        """Mean per-sample loss plus the L2 term."""
        self._check(w, data)
        X, y = data.features, data.labels
        if self.task == MULTINOMIAL_LOGISTIC:
            W, b = self.split(w)
            logits = X @ W.T + b
            m = logits.max(axis=1, keepdims=True)
            lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
            value = float(np.mean(lse - logits[np.arange(X.shape[0]), y]))
        else:
            r = X @ w - y
            value = float(r @ r) / (2.0 * X.shape[0])
        if self.lambda_reg:
            value += 0.5 * self.lambda_reg * float(w @ w)
        if not np.isfinite(value):
            raise NumericalError("loss evaluated to a non-finite value")
        return value

    def gradient(self, w: np.ndarray, data: DeviceDataset) -> np.ndarray:
        """Exact analytic gradient of :meth:`loss`."""
        self._check(w, data)
        g = self._grad_unchecked(w, data.features, data.labels)
        if not np.all(np.isfinite(g)):
            raise NumericalError("gradient has non-finite entries")
        return g

    def minibatch_gradient(self, w, data: DeviceDataset, batch_indices) -> np.ndarray:
        """Gradient of the mean loss over the indexed subset (plus L2 term)."""
        self._check(w, data)
        idx = np.asarray(batch_indices, dtype=np.intp)
        if idx.size == 0:
            raise ConfigurationError("batch_indices must be nonempty")
        if idx.min() < 0 or idx.max() >= data.num_samples:
            raise ConfigurationError(
                f"batch index out of range [0, {data.num_samples}) on device {data.device_id}"
            )
        g = self._grad_unchecked(w, data.features[idx], data.labels[idx])
        if not np.all(np.isfinite(g)):
            raise NumericalError("minibatch gradient has non-finite entries")
        return g

    def _grad_unchecked(self, w, X, y) -> np.ndarray:
        if self.task == MULTINOMIAL_LOGISTIC:
            W, b = self.split(w)
            gW, gb = _logistic_grad(W, b, X, y, self.lambda_reg)
            return np.concatenate([gW.ravel(), gb])
        return _linear_grad(w, X, y, self.lambda_reg)

    # -- smoothness -----------------------------------------------------

    def lipschitz_estimate(self, data: DeviceDataset) -> float:
        """Upper bound on the gradient Lipschitz constant of the device loss.

        Softmax cross-entropy admits the spectral bound
        ``sigma_max(X~)^2 / (2 n)`` where ``X~`` is the design matrix
        including the bias column; least squares gives
        ``sigma_max(X)^2 / n``.  The L2 term adds ``lambda_reg`` exactly.
        """
        X = data.features
        if self.task == MULTINOMIAL_LOGISTIC:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
            factor = 0.5
        else:
            factor = 1.0
        sigma, converged = spectral_norm(X)
        if not converged:
            warnings.warn(
                "power iteration did not converge; falling back to the Frobenius bound",
                RuntimeWarning,
                stacklevel=2,
            )
            sigma = float(np.linalg.norm(X))
        return factor * sigma * sigma / X.shape[0] + self.lambda_reg


def spectral_norm(X: np.ndarray, iterations: int = 100, rtol: float = 1e-9):
    """Largest singular value of ``X`` by power iteration.

    Runs at most ``iterations`` sweeps of ``v <- X^T X v`` from a fixed
    pseudo-random start, stopping once the estimate's relative change
    drops below ``rtol``.  Returns ``(sigma_max, converged)``.
    """
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    v = np.random.default_rng(0xFED5EED).standard_normal(d)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iterations):
        u = X @ v
        v = X.T @ u
        norm_v = np.linalg.norm(v)
        if norm_v == 0.0:
            return 0.0, True
        v /= norm_v
        new_sigma = np.linalg.norm(X @ v)
        if sigma > 0 and abs(new_sigma - sigma) <= rtol * sigma:
            return float(new_sigma), True
        sigma = new_sigma
    return float(sigma), False


_ARANGE = np.arange(0)


def _arange(n: int) -> np.ndarray:
    global _ARANGE
    if _ARANGE.size < n:
        _ARANGE = np.arange(max(n, 1024))
    return _ARANGE[:n]


def _logistic_grad(W, b, X, y, lam):
    """(dW, db) of mean softmax cross-entropy on (X, y), plus L2."""
    Z = X @ W.T
    Z += b
    Z -= Z.max(axis=1, keepdims=True)
    np.exp(Z, out=Z)
    Z /= Z.sum(axis=1, keepdims=True)
    n = X.shape[0]
    Z[_arange(n), y] -= 1.0
    Z *= 1.0 / n
    gW = Z.T @ X
    gb = Z.sum(axis=0)
    if lam:
        gW += lam * W
        gb += lam * b
    return gW, gb


def _linear_grad(w, X, y, lam):
    """Gradient of mean squared residual / 2 on (X, y), plus L2."""
    r = X @ w
    r -= y
    g = X.T @ r
    g *= 1.0 / X.shape[0]
    if lam:
        g += lam * w
    return g
