"""Soft-margin kernel SVM trained by sequential minimal optimization.

The dual is solved over a precomputed Gram matrix with the
maximal-violating-pair working set rule; the loop is compiled with numba
(``nogil``) so grid cells and resampling replicates can run on threads.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import ConfigError, ShapeError

KKT_TOL = 1e-3


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class SvmModel:
    kernel: str
    C: float
    gamma: float
    support_vectors: np.ndarray
    dual_coefs: np.ndarray  # alpha_i * y_i
    intercept: float
    threshold: float = 0.0
    center: np.ndarray | None = None
    scale: np.ndarray | None = None
    converged: bool = True

    @property
    def n_features(self):
        return self.support_vectors.shape[1]

    def _prepare(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"model expects {self.n_features} features, got shape {X.shape}")
        if self.center is not None:
            X = (X - self.center) / self.scale
        return X

    def decision_function(self, X):
        X = self._prepare(X)
        if X.shape[0] == 0:
            return np.zeros(0)
        return gram(X, self.support_vectors, self.kernel, self.gamma) @ self.dual_coefs + self.intercept


def gram(A, B, kernel, gamma):
    if kernel == "linear":
        return A @ B.T
    if kernel == "rbf":
        sq = (np.einsum("ij,ij->i", A, A)[:, None] + np.einsum("ij,ij->i", B, B)[None, :]
              - 2.0 * (A @ B.T))
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-gamma * sq)
    raise ConfigError(f"unknown kernel {kernel!r}")


@njit(cache=True, nogil=True)
def _select(y, alpha, grad, C, n):
    """Maximal violating pair: i maximizes -y G over I_up, j minimizes it over I_low."""
    i = -1
    j = -1
    g_max = -np.inf
    g_min = np.inf
    for t in range(n):
        v = -y[t] * grad[t]
        if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
            if v > g_max:
                g_max = v
                i = t
        if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
            if v < g_min:
                g_min = v
                j = t
    return i, j, g_max, g_min


@njit(cache=True, nogil=True)
def _smo(K, y, C, tol, max_iter):
    """Minimize 0.5 a'Qa - e'a subject to 0 <= a <= C, y'a = 0 (Q = yy' * K).

    Returns (alpha, b, iterations, converged).
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)  # Q alpha - e
    it = 0
    converged = False
    i, j, g_max, g_min = _select(y, alpha, grad, C, n)
    while it < max_iter:
        if i < 0 or j < 0 or g_max - g_min < tol:
            converged = True
            break
        it += 1
        yi = y[i]
        yj = y[j]
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 1e-12:
            quad = 1e-12
        ai_old = alpha[i]
        aj_old = alpha[j]
        if yi != yj:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai = ai_old + delta
            aj = aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0:
                    ai = 0.0
                    aj = -diff
            if diff > 0:
                if ai > C:
                    ai = C
                    aj = C - diff
            else:
                if aj > C:
                    aj = C
                    ai = C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai = ai_old - delta
            aj = aj_old + delta
            if total > C:
                if ai > C:
                    ai = C
                    aj = total - C
            else:
                if aj < 0:
                    aj = 0.0
                    ai = total
            if total > C:
                if aj > C:
                    aj = C
                    ai = total - C
            else:
                if ai < 0:
                    ai = 0.0
                    aj = total
        alpha[i] = ai
        alpha[j] = aj
        dai = ai - ai_old
        daj = aj - aj_old
        ci = yi * dai
        cj = yj * daj
        for t in range(n):
            grad[t] += y[t] * (K[i, t] * ci + K[j, t] * cj)
        i, j, g_max, g_min = _select(y, alpha, grad, C, n)

    # intercept: mean of -y G over free vectors, else midpoint of the bounds
    total = 0.0
    count = 0
    ub = np.inf
    lb = -np.inf
    for t in range(n):
        v = -y[t] * grad[t]
        if 0.0 < alpha[t] < C:
            total += v
            count += 1
        elif (y[t] > 0 and alpha[t] <= 0.0) or (y[t] < 0 and alpha[t] >= C):
            lb = max(lb, v)
        else:
            ub = min(ub, v)
    if count > 0:
        b = total / count
    elif np.isfinite(ub) and np.isfinite(lb):
        b = 0.5 * (ub + lb)
    elif np.isfinite(ub):
        b = ub
    elif np.isfinite(lb):
        b = lb
    else:
        b = 0.0
    return alpha, b, it, converged


def solve_dual(K, y, C, tol=KKT_TOL, max_iter=None):
    """Run SMO on a Gram matrix; returns ``(alpha, b, converged)``."""
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if max_iter is None:
        max_iter = 10 * n * n
    alpha, b, _, converged = _smo(np.ascontiguousarray(K, dtype=np.float64), y, float(C),
                                  float(tol), int(max_iter))
    return alpha, b, converged


def dual_objective(alpha, K, y):
    """Dual objective sum(a) - 0.5 sum_ij a_i a_j y_i y_j K_ij (to be maximized)."""
    ay = alpha * y
    return alpha.sum() - 0.5 * ay @ K @ ay


def svm_fit(X, y, kernel="rbf", C=1.0, gamma=1.0, standardize=False, tol=KKT_TOL):
    """Fit a soft-margin SVM on labels in {-1, +1} (0/1 accepted, 0 -> -1)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    y = np.where(y > 0, 1.0, -1.0)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise ShapeError(f"X shape {X.shape} does not match {len(y)} labels")
    if not np.isfinite(X).all():
        raise ConfigError("non-finite values in SVM training data")
    if len(np.unique(y)) < 2:
        raise ConfigError("SVM training needs both classes present")
    if C <= 0 or (kernel == "rbf" and gamma <= 0):
        raise ConfigError("C and gamma must be positive")
    center = scale = None
    if standardize:
        center = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        X = (X - center) / scale
    K = gram(X, X, kernel, gamma)
    alpha, b, converged = solve_dual(K, y, C, tol)
    if not converged:
        warnings.warn(f"SMO hit the iteration cap ({kernel}, C={C}, gamma={gamma}); "
                      "returning the last iterate", ConvergenceWarning, stacklevel=2)
    sv = alpha > 0
    return SvmModel(kernel=kernel, C=float(C), gamma=float(gamma), support_vectors=X[sv].copy(),
                    dual_coefs=(alpha * y)[sv], intercept=float(b), center=center, scale=scale,
                    converged=bool(converged))
