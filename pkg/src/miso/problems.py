"""Finite-sum objectives built from a linear model.

All problems have the form

    f(theta) = (1/T) sum_t [loss(y_t, x_t @ theta) + l2/2 ||theta||^2] + penalty(theta)

The ``l2`` term is folded inside every component so that each ``f^t`` is
``l2``-strongly convex; ``penalty`` is kept outside and handled by a prox
(convex) or a reweighted-l1 majorizer (log penalty).
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy.special import entr, expit

from .numlin import Dataset
from .terms import (
    LOSSES,
    PenaltyTerm,
    loss_derivative,
    loss_value,
    prox,
    reweighted_l1_weights,
    soft_threshold,
)

__all__ = [
    "LinearModelProblem",
    "LogisticL2Problem",
    "SparseLogPenaltyProblem",
    "objective",
    "gradient_component",
    "duality_gap",
    "stationarity_residual",
    "sparse_init",
    "nnz",
    "lambda_for_sparsity",
]


def _logistic(y, u):
    z = y * u
    if z >= 0:
        return math.log1p(math.exp(-z))
    return -z + math.log1p(math.exp(z))


def _logistic_deriv(y, u):
    z = y * u
    if z >= 0:
        e = math.exp(-z)
        return -y * e / (1.0 + e)
    return -y / (1.0 + math.exp(z))


class LinearModelProblem:
    """Average of ``loss(y_t, x_t @ theta) + l2/2 ||theta||^2`` plus an optional penalty."""

    def __init__(self, dataset: Dataset, loss: str, l2: float = 0.0,
                 penalty: Optional[PenaltyTerm] = None):
        if loss not in LOSSES:
            raise ValueError(f"unsupported loss {loss!r}")
        if l2 < 0:
            raise ValueError("l2 must be nonnegative")
        self.data = dataset
        self.loss = loss
        self.l2 = float(l2)
        self.penalty = penalty
        self._row_sq = None
        self._lip = None
        self._curv = 0.25 if loss == "logistic" else 1.0
        if loss == "logistic":
            self._fscalar, self._dscalar = _logistic, _logistic_deriv
        else:
            self._fscalar = lambda y, u: 0.5 * (y - u) * (y - u)
            self._dscalar = lambda y, u: u - y

    # -- sizes -------------------------------------------------------------
    @property
    def T(self) -> int:
        return self.data.T

    @property
    def p(self) -> int:
        return self.data.p

    def __repr__(self):
        return (f"{type(self).__name__}(loss={self.loss}, l2={self.l2:.4g}, "
                f"penalty={self.penalty}, data={self.data})")

    # -- full objective ----------------------------------------------------
    def smooth_value(self, theta) -> float:
        u = self.data.matvec(theta)
        v = float(np.mean(loss_value(self.loss, self.data.y, u)))
        if self.l2:
            v += 0.5 * self.l2 * float(theta @ theta)
        return v

    def penalty_value(self, theta) -> float:
        return 0.0 if self.penalty is None else self.penalty.value(theta)

    def objective(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.p,):
            raise ValueError(f"theta must have shape ({self.p},)")
        return self.smooth_value(theta) + self.penalty_value(theta)

    __call__ = objective

    def smooth_gradient(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        u = self.data.matvec(theta)
        g = self.data.rmatvec(loss_derivative(self.loss, self.data.y, u)) / self.T
        if self.l2:
            g = g + self.l2 * theta
        return g

    # -- components ----------------------------------------------------------
    def component_value(self, theta, t: int) -> float:
        u = self.row_dot(t, theta)
        v = self._fscalar(self.data.y[t], u)
        if self.l2:
            v += 0.5 * self.l2 * float(theta @ theta)
        return v

    def component_gradient(self, theta, t: int) -> np.ndarray:
        u = self.row_dot(t, theta)
        s = self._dscalar(self.data.y[t], u)
        g = self.l2 * theta if self.l2 else np.zeros(self.p)
        return self.row_axpy(t, s, g)

    def component_eval(self, theta, t: int):
        """``(value, gradient, loss derivative, margin)`` of component ``t`` at ``theta``."""
        u = self.row_dot(t, theta)
        y = self.data.y[t]
        s = self._dscalar(y, u)
        v = self._fscalar(y, u)
        if self.l2:
            v += 0.5 * self.l2 * float(theta @ theta)
            g = self.l2 * theta
        else:
            g = np.zeros(self.p)
        return v, self.row_axpy(t, s, g), s, u

    def components_at(self, K) -> tuple:
        """Values and gradients of every component at its own anchor row of ``K``."""
        K = np.asarray(K, dtype=np.float64)
        X = self.data.X
        if self.data.is_sparse:
            u = np.asarray(X.multiply(K).sum(axis=1)).ravel()
        else:
            u = np.einsum("ij,ij->i", X, K)
        y = self.data.y
        s = loss_derivative(self.loss, y, u)
        vals = loss_value(self.loss, y, u)
        if self.data.is_sparse:
            grads = np.asarray(X.multiply(s[:, None]).todense())
        else:
            grads = X * s[:, None]
        if self.l2:
            vals = vals + 0.5 * self.l2 * np.einsum("ij,ij->i", K, K)
            grads = grads + self.l2 * K
        return vals, grads

    def row_dot(self, t: int, theta) -> float:
        X = self.data.X
        if self.data.is_sparse:
            lo, hi = X.indptr[t], X.indptr[t + 1]
            return float(X.data[lo:hi] @ theta[X.indices[lo:hi]])
        return float(X[t] @ theta)

    def row_axpy(self, t: int, alpha: float, out) -> np.ndarray:
        """``out += alpha * x_t`` in place; returns ``out``."""
        X = self.data.X
        if self.data.is_sparse:
            lo, hi = X.indptr[t], X.indptr[t + 1]
            out[X.indices[lo:hi]] += alpha * X.data[lo:hi]
        else:
            out += alpha * X[t]
        return out

    def row_sqnorms(self) -> np.ndarray:
        if self._row_sq is None:
            self._row_sq = self.data.row_sqnorms()
        return self._row_sq

    def component_lipschitz(self) -> np.ndarray:
        """Per-component bounds ``c ||x_t||^2 + l2`` (``c = 0.25`` logistic, 1 squared)."""
        return self._curv * self.row_sqnorms() + self.l2

    def lipschitz(self) -> float:
        """Smoothness constant of the averaged smooth part (spectral bound)."""
        if self._lip is None:
            self._lip = self._curv * self.data.gram_max_eigenvalue() + self.l2
        return self._lip

    # -- derived problems ----------------------------------------------------
    def subset(self, idx) -> "LinearModelProblem":
        out = LinearModelProblem(self.data.subset(idx), self.loss, self.l2, self.penalty)
        return out

    def with_lambda(self, lam: float) -> "LinearModelProblem":
        """Same data with the regularization weight replaced."""
        if self.penalty is not None:
            return LinearModelProblem(self.data, self.loss, self.l2, self.penalty.with_lambda(lam))
        return LinearModelProblem(self.data, self.loss, lam, None)

    @property
    def lam(self) -> float:
        return self.penalty.lam if self.penalty is not None else self.l2

    # -- diagnostics ---------------------------------------------------------
    def stationarity_residual(self, theta, L_ref: Optional[float] = None) -> float:
        """Prox-gradient residual; zero exactly at stationary points.

        Smooth problems use ``||grad f||``. With a convex penalty the residual
        is ``L ||theta - prox(theta - grad f1 / L)||``; with the log penalty
        the prox is that of the reweighted-l1 majorizer anchored at ``theta``.
        """
        theta = np.asarray(theta, dtype=np.float64)
        g = self.smooth_gradient(theta)
        if self.penalty is None or self.penalty.lam == 0.0:
            return float(np.linalg.norm(g))
        L = self.lipschitz() if L_ref is None else float(L_ref)
        if not L > 0:
            raise ValueError("L_ref must be positive")
        v = theta - g / L
        if self.penalty.is_convex:
            new = prox(self.penalty, v, 1.0 / L)
        else:
            w = reweighted_l1_weights(self.penalty.lam, self.penalty.epsilon, theta)
            new = soft_threshold(v, w / L)
        return L * float(np.linalg.norm(theta - new))

    def duality_gap(self, theta):
        return duality_gap(self, theta)


class LogisticL2Problem(LinearModelProblem):
    """l2-regularized logistic regression with labels in {-1, +1}."""

    def __init__(self, dataset: Dataset, lam: float):
        if not lam > 0:
            raise ValueError("lam must be positive")
        super().__init__(dataset, "logistic", l2=lam)

    def with_lambda(self, lam: float) -> "LogisticL2Problem":
        return LogisticL2Problem(self.data, lam)

    def subset(self, idx) -> "LogisticL2Problem":
        return LogisticL2Problem(self.data.subset(idx), self.l2)


class SparseLogPenaltyProblem(LinearModelProblem):
    """Least squares with the non-convex penalty ``lam * sum log(|theta_j| + eps)``."""

    def __init__(self, dataset: Dataset, lam: float, epsilon: float = 0.01):
        super().__init__(dataset, "squared", 0.0, PenaltyTerm("log_penalty", lam, epsilon))

    @property
    def epsilon(self) -> float:
        return self.penalty.epsilon

    def with_lambda(self, lam: float) -> "SparseLogPenaltyProblem":
        return SparseLogPenaltyProblem(self.data, lam, self.epsilon)

    def subset(self, idx) -> "SparseLogPenaltyProblem":
        return SparseLogPenaltyProblem(self.data.subset(idx), self.lam, self.epsilon)


def objective(problem: LinearModelProblem, theta) -> float:
    return problem.objective(theta)


def gradient_component(problem: LinearModelProblem, theta, t: int) -> np.ndarray:
    """Gradient of ``loss(y_t, x_t @ theta) + l2/2 ||theta||^2`` (0-based ``t``)."""
    if not 0 <= t < problem.T:
        raise IndexError(f"component {t} out of range")
    return problem.component_gradient(np.asarray(theta, dtype=np.float64), t)


def duality_gap(problem: LinearModelProblem, theta):
    """Fenchel duality certificate for l2-logistic regression.

    Builds the dual point ``alpha_t = sigmoid(-y_t x_t @ theta)`` (clamped to
    ``[1e-12, 1 - 1e-12]``) and evaluates

        D(alpha) = (1/T) sum_t H(alpha_t) - ||(1/T) sum_t alpha_t y_t x_t||^2 / (2 lam)

    with ``H`` the binary entropy. Returns ``(primal, dual, relative_gap)``.
    """
    if problem.loss != "logistic" or problem.penalty is not None or not problem.l2 > 0:
        raise ValueError("duality gap is only defined for l2-logistic regression")
    theta = np.asarray(theta, dtype=np.float64)
    d = problem.data
    u = d.matvec(theta)
    alpha = np.clip(expit(-d.y * u), 1e-12, 1.0 - 1e-12)
    w = d.rmatvec(alpha * d.y) / d.T
    dual = float(np.mean(entr(alpha) + entr(1.0 - alpha))) - float(w @ w) / (2.0 * problem.l2)
    primal = problem.objective(theta)
    return primal, dual, (primal - dual) / abs(dual)


def stationarity_residual(problem: LinearModelProblem, theta, L_ref: Optional[float] = None) -> float:
    return problem.stationarity_residual(theta, L_ref)


def sparse_init(dataset: Dataset) -> np.ndarray:
    """``(||y|| / ||X X^T y||) X^T y``, the starting point for the log-penalty problem."""
    Xty = dataset.rmatvec(dataset.y)
    if not np.any(Xty):
        raise ValueError("X^T y = 0: initialization undefined")
    XXty = dataset.matvec(Xty)
    return (np.linalg.norm(dataset.y) / np.linalg.norm(XXty)) * Xty


def nnz(theta, tol: float = 1e-12) -> int:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return int(np.count_nonzero(np.abs(np.asarray(theta)) > tol))


def lambda_for_sparsity(dataset: Dataset, target: int, epsilon: float = 0.01,
                        max_bisect: int = 40, tol: float = 1e-9, max_iter: int = 20000):
    """Pick ``lam`` for :class:`SparseLogPenaltyProblem` whose solution has ``target`` nonzeros.

    Bisects ``log(lam)`` in ``(0, lam_max]`` with ``lam_max = eps ||X^T y||_inf / T``
    (the smallest weight that zeroes every coordinate at ``theta = 0``). Each
    candidate is solved by batch majorization-minimization from
    :func:`sparse_init`. Returns ``(lam, theta)`` for the candidate whose
    support size is closest to ``target`` (first hit wins).
    """
    from .solvers import batch_mm

    theta0 = sparse_init(dataset)
    lam_hi = epsilon * np.abs(dataset.rmatvec(dataset.y)).max() / dataset.T
    lo, hi = math.log(lam_hi) - math.log(1e4), math.log(lam_hi)
    best = None
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        lam = math.exp(mid)
        prob = SparseLogPenaltyProblem(dataset, lam, epsilon)
        theta, _ = batch_mm(prob, "dc_linearized", theta0, max_iter, tol=tol, record_every=0)
        k = nnz(theta)
        if best is None or abs(k - target) < abs(best[2] - target):
            best = (lam, theta, k)
        if k == target:
            break
        if k > target:
            lo = mid
        else:
            hi = mid
    return best[0], best[1]
