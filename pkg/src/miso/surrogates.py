"""First-order surrogate functions and a numerical certificate for them.

A surrogate ``g`` of ``f`` near an anchor ``kappa`` is stored intensionally:
the anchor, a few cached quantities (value and gradient of ``f`` at
``kappa``, weights, factorizations) and the constants of its class,

* ``L``: smoothness of the approximation error ``h = g - f``,
* ``rho``: strong convexity of ``g`` (0 when not strongly convex),
* ``majorizing``: whether ``g >= f`` everywhere.

Every family exposes ``value(theta)`` and, where a closed form exists,
``minimize()``. The solvers only ever use these two operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.optimize import lsq_linear

from .terms import (
    PenaltyTerm,
    huber_optimal_weight,
    huber_value,
    prox,
    reweighted_l1_weights,
    soft_threshold,
)

__all__ = [
    "FAMILIES",
    "random_case",
    "certify_all",
    "SurrogateError",
    "Surrogate",
    "LipschitzGradientSurrogate",
    "ProximalGradientSurrogate",
    "DCSurrogate",
    "QuadraticModel",
    "QuadraticSurrogate",
    "JensenSurrogate",
    "HuberSurrogate",
    "lipschitz_gradient_step",
    "proximal_gradient_step",
    "dc_majorizer",
    "quadratic_step",
    "jensen_surrogate",
    "huber_variational_surrogate",
    "SurrogateReport",
    "check_surrogate",
]


class SurrogateError(ValueError):
    """Raised when a surrogate cannot be built or minimized."""


def _finite_grad(g) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise SurrogateError("non-finite gradient")
    return g


class Surrogate:
    family = "generic"

    def __init__(self, kappa, L: float, rho: float = 0.0, majorizing: bool = True):
        if not L > 0:
            raise SurrogateError("L must be positive")
        if rho < 0:
            raise SurrogateError("rho must be nonnegative")
        self.kappa = np.asarray(kappa, dtype=np.float64).copy()
        self.L = float(L)
        self.rho = float(rho)
        self.majorizing = majorizing

    def value(self, theta) -> float:
        raise NotImplementedError

    def __call__(self, theta) -> float:
        return self.value(theta)

    def minimize(self) -> np.ndarray:
        raise SurrogateError(f"{self.family} surrogate has no closed-form minimizer")

    def __repr__(self):
        return (f"{type(self).__name__}(p={self.kappa.size}, L={self.L:.4g}, "
                f"rho={self.rho:.4g}, majorizing={self.majorizing})")


class LipschitzGradientSurrogate(Surrogate):
    """``f(kappa) + grad^T (theta - kappa) + L_f/2 ||theta - kappa||^2``.

    For an ``L_f``-smooth ``f`` the error is ``2 L_f``-smooth, ``L_f``-smooth
    when ``f`` is convex; the surrogate itself is ``L_f``-strongly convex.
    """

    family = "lipschitz_gradient"

    def __init__(self, f_kappa: float, grad, kappa, L_f: float, convex: bool = False):
        super().__init__(kappa, L_f if convex else 2.0 * L_f, rho=L_f)
        self.L_f = float(L_f)
        self.f_kappa = float(f_kappa)
        self.grad = _finite_grad(grad)

    def value(self, theta) -> float:
        d = np.asarray(theta, dtype=np.float64) - self.kappa
        return self.f_kappa + float(self.grad @ d) + 0.5 * self.L_f * float(d @ d)

    def minimize(self) -> np.ndarray:
        return self.kappa - self.grad / self.L_f


class ProximalGradientSurrogate(LipschitzGradientSurrogate):
    """Lipschitz-gradient surrogate of ``f1`` plus the exact convex penalty."""

    family = "proximal_gradient"

    def __init__(self, f1_kappa, grad, kappa, L_f, penalty: Optional[PenaltyTerm],
                 convex: bool = True):
        super().__init__(f1_kappa, grad, kappa, L_f, convex=convex)
        if penalty is not None and not penalty.is_convex:
            raise SurrogateError("proximal-gradient surrogates need a convex penalty")
        self.penalty = penalty
        if penalty is not None and penalty.kind == "l2":
            self.rho = L_f + penalty.lam

    def value(self, theta) -> float:
        v = super().value(theta)
        if self.penalty is not None:
            v += self.penalty.value(theta)
        return v

    def minimize(self) -> np.ndarray:
        v = self.kappa - self.grad / self.L_f
        if self.penalty is None:
            return v
        return prox(self.penalty, v, 1.0 / self.L_f)


def lipschitz_gradient_step(f_grad: Callable, kappa, L: float) -> np.ndarray:
    """Minimizer ``kappa - grad f(kappa) / L`` of the Lipschitz-gradient surrogate."""
    if not L > 0:
        raise SurrogateError("L must be positive")
    kappa = np.asarray(kappa, dtype=np.float64)
    return kappa - _finite_grad(f_grad(kappa)) / L


def proximal_gradient_step(f1_grad: Callable, kappa, L: float,
                           penalty: Optional[PenaltyTerm]) -> np.ndarray:
    """One proximal-gradient step, ``prox_{penalty/L}(kappa - grad f1(kappa) / L)``."""
    v = lipschitz_gradient_step(f1_grad, kappa, L)
    if penalty is None or penalty.lam == 0.0:
        return v
    return prox(penalty, v, 1.0 / L)


class DCSurrogate(Surrogate):
    """``f1`` plus the linearization of the concave log penalty at ``kappa``.

    ``g(theta) = f1(theta) + sum_j w_j |theta_j| + c`` with
    ``w = lam / (|kappa| + eps)`` and ``c`` chosen so that ``g(kappa) = f(kappa)``.
    The error is ``(lam / eps**2)``-smooth as a function of ``|theta|``.
    """

    family = "dc_linearized"

    def __init__(self, f1: Optional[Callable], penalty: PenaltyTerm, kappa):
        if penalty.kind != "log_penalty":
            raise SurrogateError("dc_majorizer needs a log_penalty")
        super().__init__(kappa, max(penalty.lam / penalty.epsilon ** 2, np.finfo(float).tiny))
        self.f1 = f1
        self.penalty = penalty
        self.weights = reweighted_l1_weights(penalty.lam, penalty.epsilon, self.kappa)
        ak = np.abs(self.kappa)
        self.constant = penalty.lam * float(np.log(ak + penalty.epsilon).sum()) - float(self.weights @ ak)

    def penalty_value(self, theta) -> float:
        return float(self.weights @ np.abs(np.asarray(theta, dtype=np.float64))) + self.constant

    def value(self, theta) -> float:
        f1 = 0.0 if self.f1 is None else self.f1(theta)
        return f1 + self.penalty_value(theta)

    def step(self, f1_grad: Callable, L: float, at=None) -> np.ndarray:
        """Minimize the Lipschitz-gradient surrogate of ``f1`` at ``at`` plus the weighted l1 term."""
        at = self.kappa if at is None else np.asarray(at, dtype=np.float64)
        v = lipschitz_gradient_step(f1_grad, at, L)
        return soft_threshold(v, self.weights / L)


def dc_majorizer(f1: Optional[Callable], penalty: PenaltyTerm, kappa) -> DCSurrogate:
    return DCSurrogate(f1, penalty, kappa)


@dataclass
class QuadraticModel:
    """Quadratic upper model with curvature ``H`` around ``kappa``."""

    H: np.ndarray
    kappa: np.ndarray
    grad: np.ndarray
    value: float
    _chol: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.float64)
        self.kappa = np.asarray(self.kappa, dtype=np.float64)
        self.grad = _finite_grad(self.grad)
        if self.H.shape != (self.kappa.size, self.kappa.size):
            raise SurrogateError("H must be p x p")
        if not np.allclose(self.H, self.H.T, rtol=1e-12, atol=1e-14):
            raise SurrogateError("H must be symmetric")

    def cholesky(self):
        if self._chol is None:
            try:
                self._chol = linalg.cho_factor(self.H, lower=False, check_finite=True)
            except linalg.LinAlgError as exc:
                raise SurrogateError("H is not positive definite") from exc
        return self._chol


def quadratic_step(model: QuadraticModel, constraint=None) -> np.ndarray:
    """Minimize the quadratic model, optionally over a box ``(lower, upper)``."""
    c, low = model.cholesky()
    newton = linalg.cho_solve((c, low), model.grad)
    if constraint is None:
        return model.kappa - newton
    lower, upper = constraint
    p = model.kappa.size
    lo = np.broadcast_to(np.asarray(lower, dtype=np.float64), (p,)) - model.kappa
    hi = np.broadcast_to(np.asarray(upper, dtype=np.float64), (p,)) - model.kappa
    # 0.5 d^T H d + g^T d = 0.5 ||R d + R^{-T} g||^2 + const with H = R^T R
    R = np.triu(c)
    rhs = -linalg.solve_triangular(R, model.grad, trans="T")
    res = lsq_linear(R, rhs, bounds=(lo, hi), method="bvls", tol=1e-14)
    return model.kappa + res.x


class QuadraticSurrogate(Surrogate):
    """``f(kappa) + grad^T d + d^T H d / 2``, majorizing when ``H - hess f`` is PSD.

    ``L`` is the largest eigenvalue of ``H - hess f`` over the domain and must
    be supplied by the caller.
    """

    family = "quadratic"

    def __init__(self, model: QuadraticModel, L: float):
        eig_min = float(np.linalg.eigvalsh(model.H)[0])
        super().__init__(model.kappa, L, rho=max(eig_min, 0.0))
        self.model = model

    def value(self, theta) -> float:
        d = np.asarray(theta, dtype=np.float64) - self.kappa
        return self.model.value + float(self.model.grad @ d) + 0.5 * float(d @ self.model.H @ d)

    def minimize(self, constraint=None) -> np.ndarray:
        return quadratic_step(self.model, constraint)


class JensenSurrogate(Surrogate):
    """Separable Jensen majorizer of ``theta -> f(x @ theta)`` for convex ``f``.

    ``g(theta) = sum_i w_i f(x_i / w_i (theta_i - kappa_i) + x @ kappa)`` with
    ``w_i = |x_i|**nu / ||x||_nu**nu`` on the support of ``x``.
    """

    family = "jensen"

    def __init__(self, f_scalar: Callable, L_scalar: float, x, nu: int, kappa,
                 f_argmin: Optional[float] = None):
        x = np.asarray(x, dtype=np.float64)
        if nu not in (0, 1, 2):
            raise SurrogateError("nu must be 0, 1 or 2")
        support = np.flatnonzero(x)
        if support.size == 0:
            raise SurrogateError("x must be nonzero")
        xs = np.abs(x[support])
        if nu == 0:
            w = np.full(support.size, 1.0 / support.size)
            Lp = L_scalar * xs.max() ** 2 * support.size
        elif nu == 1:
            w = xs / xs.sum()
            Lp = L_scalar * xs.max() * xs.sum()
        else:
            w = xs ** 2 / (xs @ xs)
            Lp = L_scalar * float(xs @ xs)
        super().__init__(kappa, Lp)
        self.f_scalar = f_scalar
        self.x = x
        self.nu = nu
        self.support = support
        self.w = w
        self.center = float(x @ self.kappa)
        self.f_argmin = f_argmin

    def weights(self) -> np.ndarray:
        full = np.zeros(self.x.size)
        full[self.support] = self.w
        return full

    def value(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        s = self.support
        args = self.x[s] / self.w * (theta[s] - self.kappa[s]) + self.center
        return float(self.w @ self.f_scalar(args))

    def minimize(self) -> np.ndarray:
        if self.f_argmin is None:
            raise SurrogateError("Jensen surrogate needs the scalar minimizer of f")
        theta = self.kappa.copy()
        s = self.support
        theta[s] += self.w * (self.f_argmin - self.center) / self.x[s]
        return theta


def jensen_surrogate(f_scalar: Callable, x, nu: int, kappa, L: float = 1.0,
                     f_argmin: Optional[float] = None) -> JensenSurrogate:
    """Build a :class:`JensenSurrogate`; ``L`` is the smoothness of ``f_scalar``."""
    return JensenSurrogate(f_scalar, L, x, nu, kappa, f_argmin=f_argmin)


class HuberSurrogate(Surrogate):
    """Variational majorizer of ``sum_i H(y_i - x_i @ theta)``: one IRLS step.

    Freezes the optimal weights ``w_i = max(|r_i(kappa)|, delta)`` and returns
    ``0.5 * sum_i (r_i**2 / w_i + w_i)``. Its error is bounded by the
    ``sum_i ||x_i||^2 / delta`` smoothness bound.
    """

    family = "huber_variational"

    def __init__(self, X, y, delta: float, kappa):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        kappa = np.asarray(kappa, dtype=np.float64)
        L = float(np.einsum("ij,ij->", X, X)) / delta
        super().__init__(kappa, L)
        self.X, self.y, self.delta = X, y, float(delta)
        self.w = huber_optimal_weight(delta, y - X @ kappa)
        gram = (X / self.w[:, None]).T @ X
        self.rho = max(float(np.linalg.eigvalsh(gram)[0]), 0.0)

    def objective(self, theta) -> float:
        return float(huber_value(self.delta, self.y - self.X @ theta).sum())

    def value(self, theta) -> float:
        r = self.y - self.X @ np.asarray(theta, dtype=np.float64)
        return 0.5 * float(np.sum(r * r / self.w + self.w))

    def minimize(self) -> np.ndarray:
        Xw = self.X / self.w[:, None]
        try:
            return linalg.solve(Xw.T @ self.X, Xw.T @ self.y, assume_a="pos")
        except linalg.LinAlgError as exc:
            raise SurrogateError("weighted normal equations are singular") from exc


def huber_variational_surrogate(X, y, delta: float, kappa) -> HuberSurrogate:
    return HuberSurrogate(X, y, delta, kappa)


@dataclass
class SurrogateReport:
    """Outcome of :func:`check_surrogate`; every ``*_ok`` flag must hold."""

    n_samples: int
    max_violation: float
    majorization_violations: int
    tightness_gap: float
    grad_gap: float
    grad_tolerance: float
    smoothness_ratio: float
    L_declared: float
    descent_gap: float = float("-inf")
    majorizing: bool = True

    @property
    def majorization_ok(self) -> bool:
        return not self.majorizing or self.majorization_violations == 0

    @property
    def tight_ok(self) -> bool:
        return self.tightness_gap <= 1e-12

    @property
    def grad_ok(self) -> bool:
        return self.grad_gap <= self.grad_tolerance

    @property
    def smooth_ok(self) -> bool:
        return self.smoothness_ratio <= self.L_declared * (1 + 1e-6)

    @property
    def descent_ok(self) -> bool:
        return self.descent_gap <= 1e-10

    @property
    def ok(self) -> bool:
        return (self.majorization_ok and self.tight_ok and self.grad_ok
                and self.smooth_ok and self.descent_ok)


def _fd_gradient(fun, x, step):
    g = np.empty_like(x)
    e = np.zeros_like(x)
    for j in range(x.size):
        e[j] = step
        g[j] = (fun(x + e) - fun(x - e)) / (2 * step)
        e[j] = 0.0
    return g


def sample_ball(rng, center, radius, n):
    """``n`` points uniformly distributed in the l2 ball around ``center``."""
    p = center.size
    d = rng.standard_normal((n, p))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / p)
    return center + d * r[:, None]


def check_surrogate(f: Callable, g, kappa, L_declared: float, n_samples: int = 1000,
                    radius: Optional[float] = None, rng=None,
                    majorizing: Optional[bool] = None) -> SurrogateReport:
    """Sample-based certificate that ``g`` is a first-order surrogate of ``f`` near ``kappa``.

    Draws ``n_samples`` points uniformly in the ball of radius
    ``10 * (1 + ||kappa||)`` (default) and measures

    * the largest ``f - g`` (majorization, slack ``1e-10``),
    * ``|h(kappa)|`` with ``h = g - f`` (tightness),
    * the central-difference norm of ``grad h(kappa)``,
    * the largest ``|h(theta)| / (||theta - kappa||^2 / 2)``, which must not
      exceed ``L_declared``.

    When ``g`` is a :class:`Surrogate` with ``rho > 0`` and a closed-form
    minimizer ``theta'``, also checks
    ``f(theta') + rho/2 ||theta' - theta||^2 <= f(theta) + L/2 ||theta - kappa||^2``.
    """
    rng = np.random.default_rng(rng)
    kappa = np.asarray(kappa, dtype=np.float64)
    if radius is None:
        radius = 10.0 * (1.0 + np.linalg.norm(kappa))
    if majorizing is None:
        majorizing = getattr(g, "majorizing", True)
    gv = g.value if isinstance(g, Surrogate) else g

    def h(theta):
        return gv(theta) - f(theta)

    pts = sample_ball(rng, kappa, radius, n_samples)
    fvals = np.array([f(t) for t in pts])
    gvals = np.array([gv(t) for t in pts])
    diff = fvals - gvals
    dist2 = np.einsum("ij,ij->i", pts - kappa, pts - kappa)
    mask = dist2 > 0
    ratio = np.abs(gvals - fvals)[mask] / (0.5 * dist2[mask])

    step = 1e-6 * (1.0 + np.linalg.norm(kappa))
    grad_h = _fd_gradient(h, kappa, step)
    grad_f = _fd_gradient(f, kappa, step)

    descent = float("-inf")
    if isinstance(g, Surrogate) and g.rho > 0:
        try:
            tp = g.minimize()
        except SurrogateError:
            tp = None
        if tp is not None:
            lhs = f(tp) + 0.5 * g.rho * np.einsum("ij,ij->i", pts - tp, pts - tp)
            rhs = fvals + 0.5 * L_declared * dist2
            descent = float(np.max(lhs - rhs))

    return SurrogateReport(
        n_samples=n_samples,
        max_violation=float(diff.max()),
        majorization_violations=int(np.sum(diff > 1e-10)),
        tightness_gap=abs(h(kappa)),
        grad_gap=float(np.linalg.norm(grad_h)),
        grad_tolerance=1e-5 * (1.0 + float(np.linalg.norm(grad_f))),
        smoothness_ratio=float(ratio.max()) if ratio.size else 0.0,
        L_declared=float(L_declared),
        descent_gap=descent,
        majorizing=majorizing,
    )


# ---------------------------------------------------------------------------
# certification suite over random problems
# ---------------------------------------------------------------------------

FAMILIES = ("lipschitz_gradient", "proximal_gradient", "dc_linearized", "quadratic",
            "jensen_0", "jensen_1", "jensen_2", "huber_variational")


def _logistic_avg(X, y):
    T = X.shape[0]

    def f(theta):
        return float(np.logaddexp(0.0, -y * (X @ theta)).sum()) / T

    def grad(theta):
        s = -y / (1.0 + np.exp(y * (X @ theta)))
        return X.T @ s / T

    return f, grad


def random_case(family: str, rng):
    """A random ``(f, g, kappa, L)`` instance of ``family`` for :func:`check_surrogate`."""
    T, p = int(rng.integers(10, 30)), int(rng.integers(2, 7))
    X = rng.standard_normal((T, p))
    y = np.where(rng.random(T) < 0.5, -1.0, 1.0)
    kappa = rng.standard_normal(p)
    if family in ("lipschitz_gradient", "proximal_gradient", "quadratic"):
        f1, g1 = _logistic_avg(X, y)
        H = 0.25 * X.T @ X / T
        L_f = float(np.linalg.eigvalsh(H)[-1])
        if family == "lipschitz_gradient":
            return f1, LipschitzGradientSurrogate(f1(kappa), g1(kappa), kappa, L_f, convex=True), kappa, L_f
        if family == "quadratic":
            model = QuadraticModel(H, kappa, g1(kappa), f1(kappa))
            return f1, QuadraticSurrogate(model, L_f), kappa, L_f
        pen = PenaltyTerm("l1", float(rng.uniform(0.01, 0.5)))
        g = ProximalGradientSurrogate(f1(kappa), g1(kappa), kappa, L_f, pen)
        return (lambda th: f1(th) + pen.value(th)), g, kappa, L_f
    if family == "dc_linearized":
        kappa[rng.random(p) < 0.3] = 0.0

        def f1(theta):
            r = y - X @ theta
            return 0.5 * float(r @ r) / T

        pen = PenaltyTerm("log_penalty", float(rng.uniform(1e-4, 1e-2)), 0.01)
        g = DCSurrogate(f1, pen, kappa)
        return (lambda th: f1(th) + pen.value(th)), g, kappa, g.L
    if family.startswith("jensen_"):
        nu = int(family[-1])
        x = rng.standard_normal(p)

        def phi(a):
            return np.logaddexp(0.0, -a)

        g = JensenSurrogate(phi, 0.25, x, nu, kappa)
        return (lambda th: float(phi(x @ th))), g, kappa, g.L
    if family == "huber_variational":
        yr = X @ rng.standard_normal(p) + rng.standard_normal(T)
        g = HuberSurrogate(X, yr, float(rng.uniform(0.1, 2.0)), kappa)
        return g.objective, g, kappa, g.L
    raise ValueError(f"unknown family {family!r}")


def certify_all(n_problems: int = 10, n_samples: int = 1000, seed: int = 0, families=FAMILIES):
    """Run :func:`check_surrogate` on ``n_problems`` random instances of each family."""
    rng = np.random.default_rng(seed)
    out = {}
    for fam in families:
        reports = []
        for _ in range(n_problems):
            f, g, kappa, L = random_case(fam, rng)
            reports.append(check_surrogate(f, g, kappa, L, n_samples=n_samples, rng=rng))
        out[fam] = reports
    return out
