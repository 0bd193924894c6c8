"""Shallow reference forecasters and the RMSE metric."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import WindowedSamples


class SingularSystemError(np.linalg.LinAlgError):
    pass


def rmse(predicted, actual) -> float:
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    a = np.asarray(actual, dtype=np.float64).reshape(-1)
    if p.shape != a.shape:
        raise ValueError(f"rmse: lengths differ ({p.size} vs {a.size})")
    if p.size == 0:
        raise ValueError("rmse of empty sequences")
    return float(np.sqrt(np.mean((p - a) ** 2)))


@dataclass
class MetricsRecord:
    rmse: float
    count: int
    model: str
    data: str

    def as_dict(self) -> dict:
        return {"model": self.model, "data": self.data, "rmse": self.rmse, "count": self.count}


def naive(samples: WindowedSamples) -> np.ndarray:
    """Persistence: the last flow value of each window."""
    return samples.inputs["flow"][:, -1].copy() if "flow" in samples.inputs \
        else samples.flow[samples.target_index - 1].copy()


def seasonal_naive(samples: WindowedSamples, period: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Flow one ``period`` before each target.

    Returns ``(predictions, kept_mask, skipped)``; samples whose history is
    shorter than the period are skipped.
    """
    if period < 1:
        raise ValueError("period must be >= 1")
    src = samples.target_index - period
    kept = src >= 0
    return samples.flow[src[kept]].copy(), kept, int((~kept).sum())


def cholesky_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive-definite ``A``.

    Raises SingularSystemError when a pivot is not safely positive.
    """
    n = A.shape[0]
    L = np.zeros_like(A)
    scale = max(float(np.max(np.abs(np.diag(A)))), 1.0)
    for j in range(n):
        d = A[j, j] - L[j, :j] @ L[j, :j]
        if d <= 1e-13 * scale:
            raise SingularSystemError(f"matrix is singular or not positive definite (pivot {j}: {d:.3e})")
        L[j, j] = np.sqrt(d)
        L[j + 1 :, j] = (A[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    y = np.zeros(n)
    for i in range(n):
        y[i] = (b[i] - L[i, :i] @ y[:i]) / L[i, i]
    x = np.zeros(n)
    for i in reversed(range(n)):
        x[i] = (y[i] - L[i + 1 :, i] @ x[i + 1 :]) / L[i, i]
    return x


@dataclass
class LinearModel:
    """coefficients: ``[w*M + 1]``, intercept last."""

    coefficients: np.ndarray
    ridge: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] + 1 != self.coefficients.size:
            raise ValueError(f"expected {self.coefficients.size - 1} features, got {X.shape[1]}")
        return X @ self.coefficients[:-1] + self.coefficients[-1]

    def predict_samples(self, samples: WindowedSamples) -> np.ndarray:
        return self.predict(samples.flattened())


def fit_linear_xy(X: np.ndarray, y: np.ndarray, ridge: float = 0.0) -> LinearModel:
    if ridge < 0:
        raise ValueError("ridge strength must be non-negative")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    A = Xa.T @ Xa
    A[np.arange(X.shape[1]), np.arange(X.shape[1])] += ridge  # intercept unpenalised
    try:
        beta = cholesky_solve(A, Xa.T @ y)
    except SingularSystemError as exc:
        if ridge == 0:
            raise SingularSystemError(f"{exc}; the least-squares system is singular, use a ridge strength > 0") \
                from None
        raise
    return LinearModel(beta, ridge)


def fit_linear(samples: WindowedSamples, ridge: float = 0.0) -> LinearModel:
    """Least squares (``ridge == 0``) or ridge regression on flattened windows."""
    return fit_linear_xy(samples.flattened(), samples.targets, ridge)
