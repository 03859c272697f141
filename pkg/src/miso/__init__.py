"""Majorization-minimization with first-order surrogate functions.

Batch MM and the incremental MISO family for finite sums of smooth losses
with convex or log penalties.
"""

from .numlin import Dataset, SparseRow, axpy, dot, normalize_rows, standardize
from .terms import PenaltyTerm, SmoothTerm, loss_derivative, loss_value, prox, soft_threshold
from .surrogates import (
    DCSurrogate,
    HuberSurrogate,
    JensenSurrogate,
    LipschitzGradientSurrogate,
    ProximalGradientSurrogate,
    QuadraticModel,
    QuadraticSurrogate,
    SurrogateError,
    certify_all,
    check_surrogate,
)
from .problems import (
    LinearModelProblem,
    LogisticL2Problem,
    SparseLogPenaltyProblem,
    duality_gap,
    lambda_for_sparsity,
    nnz,
    sparse_init,
    stationarity_residual,
)
from .solvers import (
    DivergenceError,
    InvariantError,
    RunResult,
    SolverConfig,
    TraceRecord,
    batch_mm,
    heuristic_L_search,
    initialize_surrogates,
    miso_composite_step,
    miso_mu_step,
    miso_step,
    run,
    sag_step,
)
from .cli import gen_data, read_libsvm, write_libsvm

__version__ = "0.1.0"
