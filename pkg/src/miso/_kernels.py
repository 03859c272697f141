"""Compiled inner loop for dense-mode MISO (optional, needs numba).

Runs a block of single-index MISO iterations on a linear-model problem with
the same arithmetic as :func:`miso.solvers.miso_composite_step`. The Python
implementation stays the reference; this is only a faster path.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    AVAILABLE = True
except ImportError:  # pragma: no cover
    AVAILABLE = False

LOSS_CODES = {"logistic": 0, "squared": 1}
PENALTY_CODES = {None: 0, "l2": 1, "l1": 2, "log_penalty": 3}

if AVAILABLE:

    @njit(cache=True)
    def _miso_block(is_sparse, Xd, data, indices, indptr, y, loss, l2, pen, lam, eps,
                    L, Lsum, kappa, grad, fval, z, dvec, S, visited, theta, anchor, draws):
        T, p = kappa.shape
        g = np.empty(p)
        step = T / Lsum
        for it in range(draws.shape[0]):
            t = draws[it]
            u = 0.0
            if is_sparse:
                for k in range(indptr[t], indptr[t + 1]):
                    u += data[k] * theta[indices[k]]
            else:
                for j in range(p):
                    u += Xd[t, j] * theta[j]
            yt = y[t]
            if loss == 0:
                m = yt * u
                if m >= 0:
                    e = math.exp(-m)
                    f = math.log1p(e)
                    s = -yt * e / (1.0 + e)
                else:
                    f = -m + math.log1p(math.exp(m))
                    s = -yt / (1.0 + math.exp(m))
            else:
                f = 0.5 * (yt - u) * (yt - u)
                s = u - yt
            tt = 0.0
            for j in range(p):
                tt += theta[j] * theta[j]
                g[j] = l2 * theta[j]
            f += 0.5 * l2 * tt
            if is_sparse:
                for k in range(indptr[t], indptr[t + 1]):
                    g[indices[k]] += s * data[k]
            else:
                for j in range(p):
                    g[j] += s * Xd[t, j]
            Lt = L[t]
            gg = 0.0
            for j in range(p):
                gg += g[j] * g[j]
            if not (math.isfinite(gg) and math.isfinite(f)):
                return it
            for j in range(p):
                zn = theta[j] - g[j] / Lt
                S[j] += Lt * (zn - z[t, j])
                z[t, j] = zn
                kappa[t, j] = theta[j]
                grad[t, j] = g[j]
            fval[t] = f
            dvec[t] = f - gg / (2.0 * Lt)
            visited[t] = True
            for j in range(p):
                anchor[j] = theta[j]
                v = S[j] / Lsum
                if pen == 0:
                    theta[j] = v
                elif pen == 1:
                    theta[j] = v / (1.0 + step * lam)
                else:
                    if pen == 3:
                        thr = lam / (abs(anchor[j]) + eps) * step
                    else:
                        thr = step * lam
                    a = abs(v) - thr
                    if a > 0:
                        theta[j] = a if v > 0 else -a
                    else:
                        theta[j] = 0.0
        return -1


def supports(problem) -> bool:
    return AVAILABLE and problem.loss in LOSS_CODES


def miso_block(state, problem, penalty, draws) -> int:
    """Run MISO iterations for ``draws`` in place; returns the failing position or -1."""
    X = problem.data.X
    if problem.data.is_sparse:
        Xd = np.zeros((1, 1))
        data, indices, indptr = X.data, X.indices.astype(np.int64), X.indptr.astype(np.int64)
    else:
        Xd = X
        data, indices, indptr = np.zeros(1), np.zeros(1, np.int64), np.zeros(1, np.int64)
    if penalty is None or penalty.lam == 0:
        pen, lam, eps = 0, 0.0, 1.0
    else:
        pen, lam = PENALTY_CODES[penalty.kind], float(penalty.lam)
        eps = float(penalty.epsilon)
    anchor = np.array(state.penalty_anchor, dtype=np.float64)
    theta = np.array(state.theta, dtype=np.float64)
    res = _miso_block(problem.data.is_sparse, Xd, data, indices, indptr, problem.data.y,
                      LOSS_CODES[problem.loss], problem.l2, pen, lam, eps,
                      state.L, state.Lsum, state.kappa, state.grad, state.fval, state.z, state.d,
                      state.S, state.visited, theta, anchor, np.asarray(draws, dtype=np.int64))
    n = len(draws) if res < 0 else res
    state.theta = theta
    state.penalty_anchor = anchor
    state.iteration += n
    state.since_resum += n
    return int(res)
