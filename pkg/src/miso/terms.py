"""Smooth losses, penalties and their proximal operators.

Everything here is vectorized over numpy arrays. Losses follow the
``loss(u, uhat)`` convention where ``u`` is the label and ``uhat`` the linear
prediction ``x @ theta``; derivatives are taken with respect to ``uhat``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .numlin import SparseRow

__all__ = [
    "LOSSES",
    "SmoothTerm",
    "PenaltyTerm",
    "loss_value",
    "loss_derivative",
    "huber_value",
    "huber_optimal_weight",
    "prox",
    "soft_threshold",
    "example_lipschitz_bound",
    "reweighted_l1_weights",
]

LOSSES = ("logistic", "squared")


def loss_value(kind: str, u, uhat):
    """Loss ``l(u, uhat)``.

    ``logistic`` is ``log(1 + exp(-u * uhat))`` evaluated without overflow;
    ``squared`` is ``(u - uhat)**2 / 2``.
    """
    u = np.asarray(u, dtype=np.float64)
    uhat = np.asarray(uhat, dtype=np.float64)
    if kind == "logistic":
        return np.logaddexp(0.0, -u * uhat)
    if kind == "squared":
        r = u - uhat
        return 0.5 * r * r
    raise ValueError(f"unknown loss {kind!r}")


def loss_derivative(kind: str, u, uhat):
    """Derivative of :func:`loss_value` with respect to ``uhat``."""
    u = np.asarray(u, dtype=np.float64)
    uhat = np.asarray(uhat, dtype=np.float64)
    if kind == "logistic":
        return -u * expit(-u * uhat)
    if kind == "squared":
        return uhat - u
    raise ValueError(f"unknown loss {kind!r}")


def _check_delta(delta):
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")


def huber_value(delta: float, u):
    """Shifted Huber function: ``u**2/(2 delta) + delta/2`` inside ``[-delta, delta]``, ``|u|`` outside."""
    _check_delta(delta)
    u = np.asarray(u, dtype=np.float64)
    a = np.abs(u)
    return np.where(a <= delta, u * u / (2.0 * delta) + 0.5 * delta, a)


def huber_optimal_weight(delta: float, u):
    """Minimizer over ``w >= delta`` of ``u**2 / w + w``, i.e. ``max(|u|, delta)``."""
    _check_delta(delta)
    return np.maximum(np.abs(np.asarray(u, dtype=np.float64)), delta)


def huber_derivative(delta: float, u):
    _check_delta(delta)
    u = np.asarray(u, dtype=np.float64)
    return u / np.maximum(np.abs(u), delta)


@dataclass(frozen=True)
class SmoothTerm:
    """A smooth scalar loss: ``logistic``, ``squared`` or ``huber``."""

    kind: str
    delta: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSSES + ("huber",):
            raise ValueError(f"unknown loss {self.kind!r}")
        if self.kind == "huber":
            _check_delta(self.delta)

    def value(self, u, uhat):
        if self.kind == "huber":
            return huber_value(self.delta, np.asarray(u) - np.asarray(uhat))
        return loss_value(self.kind, u, uhat)

    def derivative(self, u, uhat):
        if self.kind == "huber":
            return -huber_derivative(self.delta, np.asarray(u) - np.asarray(uhat))
        return loss_derivative(self.kind, u, uhat)

    @property
    def curvature_bound(self) -> float:
        """Upper bound on the second derivative in ``uhat``."""
        return {"logistic": 0.25, "squared": 1.0, "huber": 1.0 / self.delta}[self.kind]


def soft_threshold(v, thresh):
    """``sign(v) * max(|v| - thresh, 0)``; ``|v| == thresh`` maps to exactly 0."""
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


@dataclass(frozen=True)
class PenaltyTerm:
    """Penalty on the parameter vector.

    ``l2``: ``lam/2 * ||theta||^2``; ``l1``: ``lam * ||theta||_1``;
    ``log_penalty``: ``lam * sum(log(|theta_j| + epsilon))``.
    """

    kind: str
    lam: float
    epsilon: float = 0.01

    def __post_init__(self):
        if self.kind not in ("l2", "l1", "log_penalty"):
            raise ValueError(f"unknown penalty {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.kind == "log_penalty" and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def is_convex(self) -> bool:
        return self.kind != "log_penalty"

    def value(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        if self.kind == "l2":
            return 0.5 * self.lam * float(theta @ theta)
        if self.kind == "l1":
            return self.lam * float(np.abs(theta).sum())
        return self.lam * float(np.log(np.abs(theta) + self.epsilon).sum())

    def infimum(self, p: int) -> float:
        if self.kind == "log_penalty":
            return p * self.lam * np.log(self.epsilon)
        return 0.0

    def with_lambda(self, lam: float) -> "PenaltyTerm":
        return PenaltyTerm(self.kind, lam, self.epsilon)


def prox(penalty: PenaltyTerm, v, step: float) -> np.ndarray:
    """Proximal operator ``argmin 0.5*||theta - v||^2 + step * penalty(theta)``."""
    if not step > 0:
        raise ValueError("step must be positive")
    if not penalty.is_convex:
        raise ValueError("log_penalty has no prox here; majorize it with reweighted_l1_weights")
    v = np.asarray(v, dtype=np.float64)
    if penalty.kind == "l1":
        return soft_threshold(v, step * penalty.lam)
    return v / (1.0 + step * penalty.lam)


def example_lipschitz_bound(loss_kind: str, x) -> float:
    """Lipschitz constant of the gradient of ``theta -> loss(y, x @ theta)``.

    ``0.25 ||x||^2`` for the logistic loss, ``||x||^2`` for the squared loss.
    """
    if isinstance(x, SparseRow):
        sq = x.sqnorm()
    else:
        x = np.asarray(x, dtype=np.float64)
        sq = float(x @ x)
    if loss_kind == "logistic":
        return 0.25 * sq
    if loss_kind == "squared":
        return sq
    raise ValueError(f"no Lipschitz bound for loss {loss_kind!r}")


def reweighted_l1_weights(lam: float, epsilon: float, kappa) -> np.ndarray:
    """Coefficients ``lam / (|kappa_j| + epsilon)`` of ``|theta_j|`` in the linearized log penalty."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return lam / (np.abs(np.asarray(kappa, dtype=np.float64)) + epsilon)
