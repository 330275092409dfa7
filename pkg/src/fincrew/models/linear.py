"""L2-regularised logistic regression fitted by gradient descent."""

from __future__ import annotations

import numpy as np

MAX_ITER = 5000
GRAD_TOL = 1e-8


def standardize_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def design(Xs: np.ndarray) -> np.ndarray:
    return np.column_stack([Xs, np.ones(len(Xs))])


def loss_and_grad(w: np.ndarray, A: np.ndarray, y: np.ndarray, l2: float):
    """Mean log-loss plus ``l2 / (2n) * |coef|^2``; the intercept (last entry) is not penalised."""
    n = len(y)
    z = A @ w
    loss = np.mean(np.logaddexp(0.0, z) - y * z)
    coef = w[:-1]
    loss += 0.5 * l2 / n * float(coef @ coef)
    p = np.exp(-np.logaddexp(0.0, -z))
    grad = A.T @ (p - y) / n
    grad[:-1] += l2 / n * coef
    return float(loss), grad


def fit_logistic(X: np.ndarray, y: np.ndarray, l2: float = 1.0, max_iter: int = MAX_ITER,
                 tol: float = GRAD_TOL, loss_trace: list | None = None):
    """Return (mean, scale, weights). Weights act on standardised features, intercept last.

    Steps use Armijo backtracking, so the objective never increases.
    """
    mean, scale = standardize_stats(X)
    A = design((X - mean) / scale)
    yf = y.astype(np.float64)
    w = np.zeros(A.shape[1])
    loss, grad = loss_and_grad(w, A, yf, l2)
    if loss_trace is not None:
        loss_trace.append(loss)
    step = 1.0
    for _ in range(max_iter):
        if np.max(np.abs(grad)) < tol:
            break
        gg = float(grad @ grad)
        while True:
            cand = w - step * grad
            new_loss, new_grad = loss_and_grad(cand, A, yf, l2)
            if new_loss <= loss - 0.5 * step * gg or step < 1e-12:
                break
            step *= 0.5
        if new_loss > loss:
            break
        w, loss, grad = cand, new_loss, new_grad
        if loss_trace is not None:
            loss_trace.append(loss)
        step *= 2.0
    return mean, scale, w
