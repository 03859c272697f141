"""Batch and incremental majorization-minimization solvers.

``batch_mm`` minimizes one surrogate of the whole objective per iteration.
The incremental schemes keep one surrogate per component ``f^t`` and refresh
a single one (or a mini-batch) per iteration:

========  ================================================================
miso0     Lipschitz-gradient surrogates with the per-example bound
miso1     same, with ``L`` picked by a one-pass search on a subsample
miso2     ``L1 * eta`` plus a monitor that doubles ``L`` when the
          surrogates stop majorizing on average
miso_mu   ``mu``-strongly convex lower-bound models (``L`` replaced by ``mu``)
sag       stochastic average gradient, for comparison
========  ================================================================

Dense-mode surrogates are stored as ``g^t(theta) = L_t/2 ||theta - z_t||^2 + d_t``
with ``z_t = kappa_t - grad f^t(kappa_t) / L_t`` and
``d_t = f^t(kappa_t) - ||grad f^t(kappa_t)||^2 / (2 L_t)``, together with the
anchors and gradients they were built from. The minimizer of the average of
the surrogates only needs ``S = sum_t L_t z_t``, so every update is
independent of ``T``.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, fields
from typing import Callable, List, Optional

import numpy as np
from scipy import linalg

from . import _kernels
from .problems import LinearModelProblem
from .terms import loss_derivative, loss_value, prox, reweighted_l1_weights, soft_threshold

__all__ = [
    "SCHEMES",
    "INIT_MODES",
    "DivergenceError",
    "InvariantError",
    "TraceRecord",
    "SolverConfig",
    "ComponentState",
    "MemoryLightState",
    "RunResult",
    "batch_mm",
    "initialize_surrogates",
    "miso_step",
    "miso_composite_step",
    "miso_mu_step",
    "sag_step",
    "heuristic_L_search",
    "Miso2Monitor",
    "miso2_monitor",
    "run",
]

SCHEMES = ("batch_mm", "miso0", "miso1", "miso2", "miso_mu", "sag")
INIT_MODES = ("quadratic_at_theta0", "anchor_at_theta0", "deterministic_pass", "warm")
RESUM_PASSES = 10


class DivergenceError(RuntimeError):
    """The objective blew up; typically ``miso_mu`` outside ``T >= 2L/mu``."""


class InvariantError(RuntimeError):
    """A guaranteed descent property was violated (usually a wrong ``L``)."""


@dataclass
class TraceRecord:
    """One monitoring row. ``pass_count`` counts component-gradient evaluations / T."""

    pass_count: float
    wall_seconds: float
    objective: float
    duality_gap: Optional[float]
    stationarity: float
    nnz: int
    iteration: int = 0
    surrogate: Optional[float] = None
    averaged_objective: Optional[float] = None


CSV_FIELDS = ("pass", "seconds", "objective", "duality_gap", "stationarity", "nnz")


@dataclass
class SolverConfig:
    scheme: str = "miso0"
    epochs: float = 50
    L0: Optional[float] = None
    mu: Optional[float] = None
    minibatch: int = 1
    seed: int = 0
    eta: float = 0.05
    per_component_L: bool = False
    init: Optional[str] = None
    alpha: Optional[float] = None
    tol: Optional[float] = None
    record_every: float = 1.0
    kmax: int = 20
    memory_light: bool = True
    track_surrogate: bool = False
    track_average: bool = False
    divergence_ratio: float = 1e3
    compiled: bool = True

    def validate(self, T: int) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not 1 <= self.minibatch <= T:
            raise ValueError(f"minibatch must be in [1, {T}]")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must be in (0, 1]")
        if not self.epochs > 0:
            raise ValueError("epochs must be positive")
        if self.init is not None and self.init not in INIT_MODES:
            raise ValueError(f"unknown init {self.init!r}")
        if self.kmax < 0:
            raise ValueError("kmax must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown solver option(s): {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# batch scheme
# ---------------------------------------------------------------------------

def _default_family(problem: LinearModelProblem) -> str:
    if problem.penalty is None:
        return "lipschitz_gradient"
    return "proximal_gradient" if problem.penalty.is_convex else "dc_linearized"


def _record(problem, theta, passes, t0, iteration, L_ref=None, surrogate=None, avg=None):
    gap = None
    if problem.loss == "logistic" and problem.penalty is None and problem.l2 > 0:
        gap = problem.duality_gap(theta)[2]
    return TraceRecord(
        pass_count=float(passes),
        wall_seconds=time.perf_counter() - t0,
        objective=problem.objective(theta),
        duality_gap=gap,
        stationarity=problem.stationarity_residual(theta, L_ref),
        nnz=int(np.count_nonzero(np.abs(theta) > 1e-12)),
        iteration=iteration,
        surrogate=surrogate,
        averaged_objective=None if avg is None else problem.objective(avg),
    )


def batch_mm(problem: LinearModelProblem, family: Optional[str], theta0, iterations: int,
             L: Optional[float] = None, H=None, tol: Optional[float] = None,
             record_every: int = 1, check_monotone: bool = True):
    """Basic majorization-minimization: ``theta_n = argmin g_n`` with ``g_n`` built at ``theta_{n-1}``.

    Parameters
    ----------
    problem : LinearModelProblem
    family : {'lipschitz_gradient', 'proximal_gradient', 'dc_linearized', 'quadratic'} or None
        Surrogate used for the whole objective. ``None`` picks the natural one
        for the problem's penalty. ``quadratic`` uses ``H`` (default: the
        curvature bound ``c X^T X / T + l2 I``).
    theta0 : array
    iterations : int
    L : float, optional
        Smoothness constant of the smooth part; defaults to ``problem.lipschitz()``.
    tol : float, optional
        Stop once the prox-gradient residual of the previous iterate drops below ``tol``.
    record_every : int
        Trace interval in iterations; 0 disables tracing.
    check_monotone : bool
        Raise :class:`InvariantError` if the objective increases by more than 1e-10.

    Returns
    -------
    theta : ndarray
    trace : list of TraceRecord
    """
    family = family or _default_family(problem)
    theta = np.array(theta0, dtype=np.float64)
    L = problem.lipschitz() if L is None else float(L)
    pen = problem.penalty
    if family == "lipschitz_gradient" and pen is not None and pen.lam != 0:
        raise ValueError("lipschitz_gradient needs a smooth problem; use proximal_gradient")
    if family == "proximal_gradient" and pen is not None and not pen.is_convex:
        raise ValueError("proximal_gradient needs a convex penalty")
    if family == "dc_linearized" and (pen is None or pen.kind != "log_penalty"):
        raise ValueError("dc_linearized needs a log penalty")
    chol = None
    if family == "quadratic":
        if pen is not None:
            raise ValueError("quadratic surrogates are implemented for smooth problems only")
        if H is None:
            X = problem.data.X
            G = (X.T @ X)
            G = G.toarray() if hasattr(G, "toarray") else G
            H = problem._curv * G / problem.T + problem.l2 * np.eye(problem.p)
        try:
            chol = linalg.cho_factor(np.asarray(H, dtype=np.float64))
        except linalg.LinAlgError as exc:
            raise ValueError("H is not positive definite") from exc
    elif family not in ("lipschitz_gradient", "proximal_gradient", "dc_linearized"):
        raise ValueError(f"unknown family {family!r}")

    t0 = time.perf_counter()
    trace: List[TraceRecord] = []
    if record_every:
        trace.append(_record(problem, theta, 0, t0, 0))
    f_old = problem.objective(theta)
    for n in range(1, iterations + 1):
        g = problem.smooth_gradient(theta)
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient")
        if family == "quadratic":
            new = theta - linalg.cho_solve(chol, g)
        else:
            v = theta - g / L
            if family == "lipschitz_gradient" or pen is None or pen.lam == 0:
                new = v
            elif family == "proximal_gradient":
                new = prox(pen, v, 1.0 / L)
            else:
                new = soft_threshold(v, reweighted_l1_weights(pen.lam, pen.epsilon, theta) / L)
        step_res = L * float(np.linalg.norm(new - theta))
        theta = new
        f_new = problem.objective(theta)
        if check_monotone and f_new > f_old + 1e-10:
            raise InvariantError(f"objective increased at iteration {n}: {f_old!r} -> {f_new!r}")
        f_old = f_new
        if record_every and n % record_every == 0:
            trace.append(_record(problem, theta, n, t0, n))
        if tol is not None and family != "quadratic" and step_res < tol:
            break
    return theta, trace


# ---------------------------------------------------------------------------
# incremental state
# ---------------------------------------------------------------------------

class ComponentState:
    """Dense-mode surrogate memory: anchors, gradients, cached steps and their sum.

    Attributes
    ----------
    kappa, grad : ndarray (T, p)
        Anchor of every surrogate and the component gradient there.
    fval : ndarray (T,)
        Component value at its anchor.
    L : ndarray (T,)
        Per-surrogate quadratic weight (global ``L`` broadcast when uniform).
    z, d : cached steps and constants (see module docstring).
    S : ndarray (p,)
        ``sum_t L_t z_t``.
    theta : ndarray (p,)
        Current iterate, the minimizer of the averaged surrogates.
    """

    def __init__(self, T: int, p: int, L, theta0):
        L = np.broadcast_to(np.asarray(L, dtype=np.float64), (T,)).copy()
        if not np.all(L > 0):
            raise ValueError("surrogate weights L must be positive")
        theta0 = np.asarray(theta0, dtype=np.float64)
        self.T, self.p = T, p
        self.L = L
        self.kappa = np.tile(theta0, (T, 1))
        self.grad = np.zeros((T, p))
        self.fval = np.zeros(T)
        self.visited = np.zeros(T, dtype=bool)
        self.z = self.kappa.copy()
        self.d = np.zeros(T)
        self.S = L @ self.z
        self.Lsum = float(L.sum())
        self.G = np.zeros(p)
        self.theta = theta0.copy()
        self.penalty_anchor = theta0.copy()
        self.iteration = 0
        self.since_resum = 0
        self.monitor: Optional[Miso2Monitor] = None

    @property
    def L_mean(self) -> float:
        return self.Lsum / self.T

    def set_component(self, t: int, kappa, f: float, g) -> None:
        Lt = self.L[t]
        znew = kappa - g / Lt
        self.S += Lt * (znew - self.z[t])
        self.z[t] = znew
        self.kappa[t] = kappa
        self.grad[t] = g
        self.fval[t] = f
        self.d[t] = f - float(g @ g) / (2.0 * Lt)
        self.visited[t] = True

    def rebuild(self) -> None:
        """Recompute cached steps and sums from anchors and gradients."""
        self.z = self.kappa - self.grad / self.L[:, None]
        self.d = self.fval - np.einsum("ij,ij->i", self.grad, self.grad) / (2.0 * self.L)
        self.S = self.L @ self.z
        self.Lsum = float(self.L.sum())
        self.G = self.grad.sum(axis=0)
        self.since_resum = 0

    def resum(self) -> None:
        self.S = self.L @ self.z
        self.G = self.grad.sum(axis=0)
        self.since_resum = 0

    def rescale_L(self, factor: float) -> None:
        self.L = self.L * factor
        self.rebuild()

    def argmin(self, penalty, anchor) -> np.ndarray:
        """Minimizer of the averaged surrogates plus the (majorized) penalty."""
        v = self.S / self.Lsum
        self.penalty_anchor = np.array(anchor, dtype=np.float64)
        if penalty is None or penalty.lam == 0:
            return v
        step = self.T / self.Lsum
        if penalty.is_convex:
            return prox(penalty, v, step)
        w = reweighted_l1_weights(penalty.lam, penalty.epsilon, anchor)
        return soft_threshold(v, w * step)

    def smooth_surrogate_value(self, theta) -> float:
        diff = theta - self.z
        q = np.einsum("ij,ij->i", diff, diff)
        return float(np.mean(0.5 * self.L * q + self.d))

    def surrogate_value(self, theta, penalty=None) -> float:
        """Average of the component surrogates at ``theta`` (plus the penalty model)."""
        v = self.smooth_surrogate_value(theta)
        if penalty is not None and penalty.lam != 0:
            if penalty.is_convex:
                v += penalty.value(theta)
            else:
                w = reweighted_l1_weights(penalty.lam, penalty.epsilon, self.penalty_anchor)
                a = np.abs(self.penalty_anchor)
                v += float(w @ (np.abs(theta) - a)) + penalty.lam * float(np.log(a + penalty.epsilon).sum())
        return v

    def copy(self) -> "ComponentState":
        new = object.__new__(ComponentState)
        new.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v)
                             for k, v in self.__dict__.items()})
        new.monitor = None
        return new


class MemoryLightState:
    """Scalar-only memory for ``miso_mu`` on ``loss(y, x @ theta) + mu/2 ||theta||^2``.

    Stores the loss derivative ``s_t`` and margin ``u_t`` at every anchor.
    Since ``kappa - grad f^t(kappa) / mu = -s_t x_t / mu``, the iterate is
    ``theta = (n_unvisited * theta0 - S / mu) / T`` with ``S = sum_visited s_t x_t``.
    """

    def __init__(self, problem: LinearModelProblem, mu: float, theta0):
        if problem.penalty is not None or problem.l2 != mu:
            raise ValueError("memory-light mode needs a smooth problem with l2 == mu")
        self.T, self.p = problem.T, problem.p
        self.mu = float(mu)
        self.theta0 = np.array(theta0, dtype=np.float64)
        self.s = np.zeros(self.T)
        self.u = np.zeros(self.T)
        self.visited = np.zeros(self.T, dtype=bool)
        self.n_unvisited = self.T
        self.S = np.zeros(self.p)
        self.theta = self.theta0.copy()
        self.iteration = 0
        self.since_resum = 0
        self.monitor = None

    def resum(self, problem) -> None:
        self.S = problem.data.rmatvec(np.where(self.visited, self.s, 0.0))
        self.theta = (self.n_unvisited * self.theta0 - self.S / self.mu) / self.T
        self.since_resum = 0

    def dense_z(self, problem) -> np.ndarray:
        X = problem.data.X
        X = X.toarray() if hasattr(X, "toarray") else X
        z = -(self.s[:, None] * X) / self.mu
        z[~self.visited] = self.theta0
        return z

    def surrogate_value(self, problem, theta, penalty=None) -> float:
        d = problem.data
        y, u, s, vis = d.y, self.u, self.s, self.visited
        sq = problem.row_sqnorms()
        dvals = np.where(vis, loss_value(problem.loss, y, u) - s * u - s * s * sq / (2 * self.mu), 0.0)
        tt = float(theta @ theta)
        vis_q = tt + (2.0 / self.mu) * s * d.matvec(theta) + s * s * sq / self.mu ** 2
        diff0 = theta - self.theta0
        q = np.where(vis, vis_q, float(diff0 @ diff0))
        return float(np.mean(0.5 * self.mu * q + dvals))


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def initialize_surrogates(problem: LinearModelProblem, theta0, mode: str = "quadratic_at_theta0",
                          L=None, prior=None, memory_light: bool = False, mu=None,
                          scheme: str = "miso"):
    """Build the per-component surrogate memory.

    Modes
    -----
    quadratic_at_theta0
        ``g_0^t = L_t/2 ||theta - theta0||^2`` (``z_t = theta0``); no gradient evaluated.
    anchor_at_theta0
        Genuine surrogates of every ``f^t`` anchored at ``theta0`` (one full pass).
    deterministic_pass
        ``quadratic_at_theta0`` followed by one MISO sweep over ``t = 0..T-1`` in order.
    warm
        Reuse the anchors of ``prior`` (a state from a run on the same data with
        another regularization weight); gradients are refreshed only if the
        smooth part changed.

    Returns a :class:`ComponentState` (or :class:`MemoryLightState`).
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    if theta0.shape != (problem.p,):
        raise ValueError(f"theta0 must have shape ({problem.p},)")
    if mode not in INIT_MODES:
        raise ValueError(f"unknown init mode {mode!r}")
    T = problem.T

    if memory_light:
        state = MemoryLightState(problem, mu, theta0)
        if mode == "anchor_at_theta0":
            u = problem.data.matvec(theta0)
            state.u = u
            state.s = loss_derivative(problem.loss, problem.data.y, u)
            state.visited[:] = True
            state.n_unvisited = 0
            state.resum(problem)
            state.iteration = 1
        elif mode == "deterministic_pass":
            for t in range(T):
                miso_mu_step(state, problem, t)
        elif mode == "warm":
            if prior is None or not isinstance(prior, MemoryLightState) or prior.p != problem.p or prior.T != T:
                raise ValueError("warm start needs a memory-light prior state with matching dimensions")
            state = _copy_light(prior)
        return state

    if mode == "warm":
        if prior is None or not isinstance(prior, ComponentState):
            raise ValueError("warm start needs a prior ComponentState")
        if prior.kappa.shape != (T, problem.p):
            raise ValueError(f"prior state has shape {prior.kappa.shape}, expected {(T, problem.p)}")
        state = prior.copy()
        if L is not None:
            state.L = np.broadcast_to(np.asarray(L, dtype=np.float64), (T,)).copy()
        if getattr(prior, "smooth_key", None) != _smooth_key(problem):
            vis = state.visited
            f, g = problem.components_at(state.kappa)
            state.fval = np.where(vis, f, 0.0)
            state.grad = np.where(vis[:, None], g, 0.0)
        state.rebuild()
        state.smooth_key = _smooth_key(problem)
        state.theta = state.argmin(problem.penalty, state.theta)
        return state

    if L is None:
        L = problem.component_lipschitz().max()
    state = ComponentState(T, problem.p, L, theta0)
    state.smooth_key = _smooth_key(problem)
    if mode == "anchor_at_theta0":
        f, g = problem.components_at(state.kappa)
        state.fval, state.grad = f, g
        state.visited[:] = True
        state.rebuild()
        if scheme != "sag":
            state.theta = state.argmin(problem.penalty, theta0)
            state.iteration = 1
    elif mode == "deterministic_pass":
        for t in range(T):
            if scheme == "sag":
                raise ValueError("sag does not use the deterministic pass")
            miso_step(state, problem, t)
    return state


def _smooth_key(problem):
    return (id(problem.data), problem.loss, problem.l2)


def _copy_light(prior: MemoryLightState) -> MemoryLightState:
    new = object.__new__(MemoryLightState)
    new.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v)
                         for k, v in prior.__dict__.items()})
    return new


# ---------------------------------------------------------------------------
# incremental steps
# ---------------------------------------------------------------------------

def _refresh(state: ComponentState, problem: LinearModelProblem, t: int, theta) -> None:
    f, g, _, _ = problem.component_eval(theta, t)
    if not np.all(np.isfinite(g)) or not math.isfinite(f):
        raise DivergenceError(f"non-finite gradient at component {t}")
    mon = state.monitor
    if mon is not None:
        mon.observe(state, t, theta, f)
    state.set_component(t, theta, f, g)


def miso_composite_step(state: ComponentState, problem: LinearModelProblem, t, penalty) -> np.ndarray:
    """Refresh the surrogate(s) of component(s) ``t`` at the current iterate and re-minimize.

    ``t`` may be an int or a sequence (mini-batch, all anchored at the same
    iterate). The new iterate is ``prox_{penalty / Lbar}(S / sum_t L_t)``,
    with ``Lbar`` the mean surrogate weight; for a log penalty the prox is
    that of its reweighted-l1 majorizer at the previous iterate.
    """
    theta = state.theta
    if np.ndim(t) == 0:
        _refresh(state, problem, int(t), theta)
        state.iteration += 1
    else:
        for tt in t:
            _refresh(state, problem, int(tt), theta)
        state.iteration += 1
    state.since_resum += 1
    state.theta = state.argmin(penalty, theta)
    return state.theta


def miso_step(state: ComponentState, problem: LinearModelProblem, t) -> np.ndarray:
    """One MISO iteration with the problem's own penalty (none for smooth problems)."""
    return miso_composite_step(state, problem, t, problem.penalty)


def miso_mu_step(state: MemoryLightState, problem: LinearModelProblem, t: int) -> np.ndarray:
    """Memory-light MISO-mu update using stored loss derivatives only.

    ``theta <- theta - (l'(y_t, x_t @ theta) - s_t) x_t / (T mu)``; the first
    visit of ``t`` also removes its ``theta0`` share from the average.
    """
    theta = state.theta
    u = problem.row_dot(t, theta)
    s = problem._dscalar(problem.data.y[t], u)
    if not math.isfinite(s):
        raise DivergenceError("non-finite loss derivative")
    T, mu = state.T, state.mu
    if state.visited[t]:
        ds = s - state.s[t]
    else:
        ds = s
        state.visited[t] = True
        state.n_unvisited -= 1
        theta -= state.theta0 / T
    problem.row_axpy(t, ds, state.S)
    problem.row_axpy(t, -ds / (T * mu), theta)
    state.s[t] = s
    state.u[t] = u
    state.iteration += 1
    state.since_resum += 1
    return theta


def sag_step(state: ComponentState, problem: LinearModelProblem, t, alpha: float) -> np.ndarray:
    """``theta <- theta - alpha/T sum_t grad f^t(kappa_t)`` after refreshing ``kappa_t = theta``."""
    theta = state.theta
    ts = [int(t)] if np.ndim(t) == 0 else [int(x) for x in t]
    for tt in ts:
        g = problem.component_gradient(theta, tt)
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient")
        state.G += g - state.grad[tt]
        state.grad[tt] = g
        state.kappa[tt] = theta
        state.visited[tt] = True
    state.iteration += 1
    state.since_resum += 1
    state.theta = theta - (alpha / state.T) * state.G
    return state.theta


# ---------------------------------------------------------------------------
# heuristics
# ---------------------------------------------------------------------------

def heuristic_L_search(problem: LinearModelProblem, theta0, L0, eta: float = 0.05,
                       kmax: int = 20, seed: int = 0):
    """Pick ``L = 2^-k L0`` from one deterministic pass over an ``eta`` fraction of the data.

    The subsample is fixed by ``seed``. Every ``k = 0..kmax`` is tried and the
    candidate with the smallest subsample objective after its pass wins;
    ``k = 0`` is the reference, so the returned ``L`` never does worse than
    ``L0`` on the subsample. ``L0`` may be a per-component array.

    Returns
    -------
    L : float or ndarray
        Same kind as ``L0`` (arrays are scaled by the selected factor).
    passes : float
        Component evaluations spent, in units of full passes.
    """
    if not 0 < eta <= 1:
        raise ValueError("eta must be in (0, 1]")
    T = problem.T
    m = max(1, int(math.ceil(eta * T)))
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(T, size=m, replace=False))
    sub = problem.subset(idx)
    L0_arr = np.asarray(L0, dtype=np.float64)
    sub_L0 = L0_arr[idx] if L0_arr.ndim else L0_arr
    best_factor, best_obj = 1.0, math.inf
    for k in range(kmax + 1):
        factor = 2.0 ** -k
        try:
            with np.errstate(all="ignore"):
                st = initialize_surrogates(sub, theta0, "deterministic_pass", L=sub_L0 * factor)
                obj = sub.objective(st.theta)
        except (DivergenceError, FloatingPointError, OverflowError, ValueError):
            continue
        if math.isfinite(obj) and obj < best_obj:
            best_factor, best_obj = factor, obj
    if not math.isfinite(best_obj):
        warnings.warn("every step-size candidate diverged; keeping L0", RuntimeWarning, stacklevel=2)
    passes = m * (kmax + 1) / T
    return (L0_arr * best_factor if L0_arr.ndim else float(L0) * best_factor), passes


class Miso2Monitor:
    """Accumulators ``a_t = f^t(theta_{n-1})`` and ``b_t = g^t(theta_{n-1})`` for visited ``t``.

    ``b_t`` is stored as ``lin_t + L_t * q_t`` so it can be re-evaluated when
    ``L`` changes without touching the data again.
    """

    def __init__(self, T: int):
        self.a = np.zeros(T)
        self.lin = np.zeros(T)
        self.q = np.zeros(T)
        self.seen = np.zeros(T, dtype=bool)
        self.since_check = 0
        self.doublings = 0

    def observe(self, state: ComponentState, t: int, theta, f_theta: float) -> None:
        diff = theta - state.kappa[t]
        self.a[t] = f_theta
        self.lin[t] = state.fval[t] + float(state.grad[t] @ diff)
        self.q[t] = 0.5 * float(diff @ diff)
        self.seen[t] = True
        self.since_check += 1

    def sums(self, state: ComponentState):
        s = self.seen
        A = float(self.a[s].sum())
        B = float(self.lin[s].sum() + (state.L[s] * self.q[s]).sum())
        return A, B


def miso2_monitor(state: ComponentState, problem: LinearModelProblem, max_doublings: int = 60) -> bool:
    """Compare ``A = sum a_t`` with ``B = sum b_t`` and double ``L`` until ``A <= B``.

    A relative slack of 1e-12 absorbs rounding in the sums.

    Returns True when ``L`` was increased (the cached steps and the iterate
    are rebuilt in that case).
    """
    mon = state.monitor
    mon.since_check = 0
    A, B = mon.sums(state)
    slack = 1e-12 * max(1.0, abs(A))
    if A > B + slack and not np.any(mon.q[mon.seen] > 0):
        return False
    raised = False
    k = 0
    while A > B + slack and k < max_doublings:
        state.L = state.L * 2.0
        mon.doublings += 1
        A, B = mon.sums(state)
        raised = True
        k += 1
    if raised:
        state.rebuild()
        state.theta = state.argmin(problem.penalty, state.penalty_anchor)
    return raised


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    theta: np.ndarray
    trace: List[TraceRecord]
    state: object = None
    L: object = None
    passes: float = 0.0

    def __iter__(self):
        yield self.theta
        yield self.trace


def _default_init(scheme: str) -> str:
    if scheme == "miso_mu":
        return "quadratic_at_theta0"
    if scheme == "sag":
        return "anchor_at_theta0"
    return "deterministic_pass"


def run(config: SolverConfig, problem: LinearModelProblem, theta0=None, prior_state=None,
        callback: Optional[Callable] = None) -> RunResult:
    """Run the configured scheme and return the final iterate and its trace.

    Indices are drawn uniformly with replacement from ``{0..T-1}`` with
    ``numpy.random.default_rng(seed)`` (PCG64); a mini-batch of size ``m``
    draws ``m`` distinct indices per iteration. A :class:`TraceRecord` is
    appended after initialization and then every ``record_every`` passes.
    ``prior_state`` enables the warm restart (``init='warm'`` implied).
    ``callback(state, problem)`` is called after every iteration when given.
    """
    T = problem.T
    config.validate(T)
    theta0 = np.zeros(problem.p) if theta0 is None else np.asarray(theta0, dtype=np.float64)
    scheme = config.scheme
    t0 = time.perf_counter()

    if scheme == "batch_mm":
        theta, trace = batch_mm(problem, None, theta0, int(math.ceil(config.epochs)),
                                L=config.L0, tol=config.tol,
                                record_every=max(1, int(round(config.record_every))))
        return RunResult(theta, trace, None, config.L0 or problem.lipschitz(), trace[-1].pass_count)

    init = config.init or ("warm" if prior_state is not None else _default_init(scheme))
    passes = 0.0

    if config.per_component_L:
        base_L = problem.component_lipschitz()
    else:
        base_L = problem.component_lipschitz().max()
    if config.L0 is not None:
        base_L = config.L0 if not config.per_component_L else base_L * (config.L0 / np.max(base_L))

    memory_light = False
    if scheme == "miso_mu":
        mu = problem.l2 if config.mu is None else float(config.mu)
        if not mu > 0:
            raise ValueError("miso_mu needs a positive strong-convexity parameter mu")
        if problem.penalty is not None:
            raise ValueError("miso_mu applies to smooth problems only")
        memory_light = config.memory_light and mu == problem.l2
        L = mu
    elif scheme in ("miso1", "miso2"):
        if init == "warm" and prior_state is not None:
            L = prior_state.L.copy()
        else:
            L, sp = heuristic_L_search(problem, theta0, base_L, config.eta, config.kmax, config.seed)
            passes += sp
            if scheme == "miso2":
                L = L * config.eta
    else:
        L = base_L
    if init == "warm" and scheme not in ("miso1", "miso2"):
        L = None if prior_state is None else prior_state.L if not memory_light else None

    if scheme == "sag":
        if problem.penalty is not None:
            raise ValueError("sag applies to smooth problems only")
        if init == "deterministic_pass":
            raise ValueError("sag does not use the deterministic pass")
        alpha = config.alpha if config.alpha is not None else 1.0 / (16.0 * float(np.max(base_L)))

    state = initialize_surrogates(problem, theta0, init, L=L, prior=prior_state,
                                  memory_light=memory_light, mu=L if scheme == "miso_mu" else None,
                                  scheme=scheme)
    if init in ("anchor_at_theta0", "deterministic_pass"):
        passes += 1.0
    elif init == "warm" and not memory_light and getattr(prior_state, "smooth_key", None) != _smooth_key(problem):
        passes += 1.0
    if scheme == "miso2":
        state.monitor = Miso2Monitor(T)

    rng = np.random.default_rng(config.seed)
    m = config.minibatch
    per_record = max(1, int(round(config.record_every * T / m))) if config.record_every else 0
    total_iters = int(math.ceil(config.epochs * T / m))
    resum_every = max(1, RESUM_PASSES * T // m)
    penalty = problem.penalty

    avg = None
    n_avg = 0
    if config.track_average:
        avg = np.zeros(problem.p)

    def surrogate_now():
        if not config.track_surrogate or scheme == "sag":
            return None
        if memory_light:
            return state.surrogate_value(problem, state.theta)
        return state.surrogate_value(state.theta, penalty)

    trace: List[TraceRecord] = []

    def record(it):
        rec = _record(problem, state.theta, passes + it * m / T, t0, state.iteration,
                      surrogate=surrogate_now(), avg=None if avg is None or n_avg == 0 else avg / n_avg)
        trace.append(rec)
        return rec

    first = record(0)
    f_init = first.objective
    limit = config.divergence_ratio * max(abs(f_init), 1e-300)
    if config.tol is not None and first.stationarity < config.tol:
        total_iters = 0

    use_compiled = (config.compiled and m == 1 and callback is None and not memory_light
                    and avg is None and scheme in ("miso0", "miso1", "miso_mu")
                    and _kernels.supports(problem))
    block = per_record if per_record else total_iters
    it = 0
    while it < total_iters:
        nb = min(block, total_iters - it)
        if m == 1:
            draws = rng.integers(0, T, size=nb)
        else:
            draws = [rng.choice(T, size=m, replace=False) for _ in range(nb)]
        if use_compiled:
            bad = _kernels.miso_block(state, problem, penalty, draws)
            if bad >= 0:
                raise DivergenceError(f"non-finite gradient at component {int(draws[bad])}")
            if state.since_resum >= resum_every:
                state.resum()
            draws = ()
        for t in draws:
            if scheme == "sag":
                theta = sag_step(state, problem, t, alpha)
            elif memory_light:
                if m == 1:
                    theta = miso_mu_step(state, problem, int(t))
                else:
                    for tt in t:
                        theta = miso_mu_step(state, problem, int(tt))
            else:
                theta = miso_composite_step(state, problem, t, penalty)
            if avg is not None:
                avg += theta
                n_avg += 1
            if state.monitor is not None and state.monitor.since_check >= T:
                miso2_monitor(state, problem)
            if state.since_resum >= resum_every:
                state.resum(problem) if memory_light else state.resum()
            if callback is not None:
                callback(state, problem)
        it += nb
        if per_record:
            with np.errstate(over="ignore", invalid="ignore"):
                rec = record(it)
            if not math.isfinite(rec.objective) or rec.objective > limit:
                raise DivergenceError(
                    f"{scheme}: objective {rec.objective:.3g} exceeds {config.divergence_ratio:g}x its "
                    f"initial value; miso_mu needs T >= 2L/mu (large-sample condition)")
            if config.tol is not None and rec.stationarity < config.tol:
                break
    if not per_record or trace[-1].iteration != state.iteration:
        record(it)
    return RunResult(state.theta.copy(), trace, state, state.L if not memory_light else state.mu,
                     trace[-1].pass_count)
