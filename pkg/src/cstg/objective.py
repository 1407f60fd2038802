"""Task losses, the gate-regularized empirical risk, and an ISTA LASSO baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import tensor as T
from .errors import ConfigError, DataError, DimensionError
from .tensor import Tensor

LOSS_KINDS = ("mse", "bce")
BCE_EPS = 1e-12


def check_loss_kind(kind: str) -> str:
    if kind not in LOSS_KINDS:
        raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {kind!r}")
    return kind


def task_loss(kind: str, yhat: Tensor, y) -> Tensor:
    """Mean squared error, or mean binary cross-entropy of probabilities."""
    check_loss_kind(kind)
    yhat = T.as_tensor(yhat)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if yhat.shape != y.shape:
        raise DimensionError(f"predictions {yhat.shape} and targets {y.shape} differ")
    if kind == "mse":
        return T.mean(T.square(yhat - y))
    if not np.all((y == 0) | (y == 1)):
        raise DataError("bce targets must be 0 or 1")
    p = T.clip(yhat, BCE_EPS, 1.0 - BCE_EPS)
    ll = T.log(p) * y + T.log(1.0 - p) * (1.0 - y)
    return -T.mean(ll)


def empirical_risk(loss: Tensor, reg_per_row: Tensor, lam: float) -> Tensor:
    """``loss + lam * mean(reg_per_row)``."""
    if lam == 0:
        return loss
    return loss + T.scale(T.mean(reg_per_row), lam)


# -- LASSO ----------------------------------------------------------------------


@dataclass
class LassoModel:
    coef: np.ndarray
    intercept: float
    task: str
    n_iter: int
    objective: list[float]

    def predict(self, X) -> np.ndarray:
        lin = np.asarray(X, dtype=np.float64) @ self.coef + self.intercept
        return special.expit(lin) if self.task == "bce" else lin


def _soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _smooth_loss(task, X, y, beta, b):
    lin = X @ beta + b
    n = len(y)
    if task == "mse":
        r = lin - y
        return float(r @ r) / n, 2.0 * (X.T @ r) / n, 2.0 * r.sum() / n
    p = special.expit(lin)
    # log(1 + e^lin) - y*lin
    loss = float(np.mean(np.logaddexp(0.0, lin) - y * lin))
    r = p - y
    return loss, X.T @ r / n, r.sum() / n


def lasso_fit(X, y, lam: float, task: str = "mse", iters: int = 10_000,
              tol: float = 1e-8) -> LassoModel:
    """Minimize ``mean loss + lam * ||beta||_1`` by proximal gradient (ISTA).

    The intercept is unpenalized.  ``mse`` uses the squared residual without a
    1/2 factor; ``bce`` is the logistic log-loss on the linear score.
    """
    check_loss_kind(task)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.size or y.size < 1:
        raise DimensionError(f"lasso_fit: X {X.shape} and y {y.shape} do not align")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("lasso_fit: non-finite values in X or y")
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    n, p = X.shape
    # Centered columns are orthogonal to the intercept direction; rescaling the
    # intercept to the same spectral scale keeps one step size well conditioned.
    x_mean = X.mean(axis=0)
    Xc = X - x_mean
    smax = np.linalg.norm(Xc, 2) if p else 0.0
    smax = smax if smax > 0 else np.sqrt(n)
    c = smax / np.sqrt(n)
    lip = (2.0 if task == "mse" else 0.25) * smax ** 2 / n
    step = 1.0 / lip

    beta = np.zeros(p)
    if task == "mse":
        a = float(np.mean(y)) / c
    else:
        a = float(special.logit(np.clip(np.mean(y), 1e-6, 1 - 1e-6))) / c
    f, gb, gi = _smooth_loss(task, Xc, y, beta, a * c)
    history = [f + lam * np.abs(beta).sum()]
    it = 0
    for it in range(1, iters + 1):
        beta = _soft_threshold(beta - step * gb, step * lam)
        a = a - step * c * gi
        f, gb, gi = _smooth_loss(task, Xc, y, beta, a * c)
        history.append(f + lam * np.abs(beta).sum())
        prev, cur = history[-2], history[-1]
        if abs(prev - cur) <= tol * max(abs(prev), 1e-300):
            break
    return LassoModel(beta, a * c - float(x_mean @ beta), task, it, history)
