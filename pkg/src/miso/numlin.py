"""Vectors, design matrices and the dataset preprocessing used by the solvers.

Dense designs are stored as C-contiguous ``(T, p)`` float64 arrays, sparse
ones as :class:`scipy.sparse.csr_matrix`. Individual sparse rows are exposed
as :class:`SparseRow` so that incremental solvers only touch the nonzeros.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import sparse

__all__ = [
    "SparseRow",
    "Dataset",
    "dot",
    "axpy",
    "standardize",
    "normalize_rows",
]


@dataclass(frozen=True)
class SparseRow:
    """A sparse vector of dimension ``dim`` with strictly increasing indices."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-d arrays of equal length")
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.dim):
            raise ValueError("indices must be strictly increasing and within [0, dim)")
        keep = val != 0.0
        object.__setattr__(self, "indices", idx[keep])
        object.__setattr__(self, "values", val[keep])

    @classmethod
    def from_dense(cls, x) -> "SparseRow":
        x = np.asarray(x, dtype=np.float64)
        nz = np.flatnonzero(x)
        return cls(nz, x[nz], x.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def sqnorm(self) -> float:
        return float(self.values @ self.values)


Vector = Union[np.ndarray, SparseRow]


def _dim(a) -> int:
    return a.dim if isinstance(a, SparseRow) else np.shape(a)[0]


def dot(a: Vector, b: np.ndarray) -> float:
    """Inner product of a dense or sparse vector with a dense vector."""
    b = np.asarray(b, dtype=np.float64)
    if _dim(a) != b.shape[0]:
        raise ValueError(f"dimension mismatch: {_dim(a)} vs {b.shape[0]}")
    if isinstance(a, SparseRow):
        return float(a.values @ b[a.indices])
    return float(np.asarray(a, dtype=np.float64) @ b)


def axpy(alpha: float, x: Vector, y: np.ndarray) -> np.ndarray:
    """Return ``y + alpha * x`` as a new array; ``y`` is left untouched."""
    y = np.array(y, dtype=np.float64)
    if _dim(x) != y.shape[0]:
        raise ValueError(f"dimension mismatch: {_dim(x)} vs {y.shape[0]}")
    if isinstance(x, SparseRow):
        y[x.indices] += alpha * x.values
    else:
        y += alpha * np.asarray(x, dtype=np.float64)
    return y


class Dataset:
    """Labeled design ``{(y_t, x_t)}`` with ``T`` rows and ``p`` features.

    Parameters
    ----------
    X : ndarray of shape (T, p) or scipy sparse matrix
        Design matrix. Sparse input is converted to CSR with sorted indices
        and explicit zeros removed.
    y : array-like of shape (T,)
        Labels; +/-1 for classification, any real for regression.
    """

    def __init__(self, X, y):
        if sparse.issparse(X):
            X = sparse.csr_matrix(X, dtype=np.float64)
            X.eliminate_zeros()
            X.sort_indices()
        else:
            X = np.ascontiguousarray(X, dtype=np.float64)
            if X.ndim != 2:
                raise ValueError("X must be 2-d")
        y = np.ascontiguousarray(y, dtype=np.float64).ravel()
        if X.shape[0] < 1:
            raise ValueError("dataset needs at least one example")
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"{X.shape[0]} rows but {y.shape[0]} labels")
        self.X = X
        self.y = y

    @property
    def T(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.X)

    @property
    def nnz(self) -> int:
        if self.is_sparse:
            return int(self.X.nnz)
        return int(np.count_nonzero(self.X))

    @property
    def density(self) -> float:
        return self.nnz / (self.T * self.p)

    def __len__(self):
        return self.T

    def __repr__(self):
        kind = "sparse" if self.is_sparse else "dense"
        return f"Dataset(T={self.T}, p={self.p}, {kind}, density={self.density:.4g})"

    def row(self, t: int) -> Vector:
        if self.is_sparse:
            X = self.X
            lo, hi = X.indptr[t], X.indptr[t + 1]
            return SparseRow(X.indices[lo:hi], X.data[lo:hi], self.p)
        return self.X[t]

    def row_sqnorms(self) -> np.ndarray:
        if self.is_sparse:
            return np.asarray(self.X.multiply(self.X).sum(axis=1)).ravel()
        return np.einsum("ij,ij->i", self.X, self.X)

    def matvec(self, theta) -> np.ndarray:
        """Margins ``X @ theta``."""
        return np.asarray(self.X @ theta).ravel()

    def rmatvec(self, v) -> np.ndarray:
        """``X.T @ v``."""
        return np.asarray(self.X.T @ v).ravel()

    def gram_max_eigenvalue(self) -> float:
        """Largest eigenvalue of ``X.T @ X / T``."""
        if self.is_sparse:
            if min(self.X.shape) <= 2:
                dense = self.X.toarray()
                return float(np.linalg.norm(dense, 2) ** 2 / self.T)
            from scipy.sparse.linalg import svds

            s = svds(self.X, k=1, return_singular_vectors=False, random_state=0)
            return float(s[0] ** 2 / self.T)
        if self.p <= self.T:
            G = self.X.T @ self.X
        else:
            G = self.X @ self.X.T
        return float(np.linalg.eigvalsh(G)[-1] / self.T)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx])

    def to_dense(self) -> "Dataset":
        if not self.is_sparse:
            return self
        return Dataset(self.X.toarray(), self.y)

    def to_sparse(self) -> "Dataset":
        if self.is_sparse:
            return self
        return Dataset(sparse.csr_matrix(self.X), self.y)


def standardize(d: Dataset) -> Dataset:
    """Center every feature and scale it to unit (population) variance.

    Constant features are set to zero and reported with a ``RuntimeWarning``.
    """
    if d.is_sparse:
        raise ValueError("standardize expects a dense dataset; use normalize_rows for sparse data")
    X = d.X
    mean = X.mean(axis=0)
    Xc = X - mean
    std = np.sqrt(np.mean(Xc * Xc, axis=0))
    const = std == 0.0
    if np.any(const):
        warnings.warn(
            f"constant feature(s) {np.flatnonzero(const).tolist()} left at zero",
            RuntimeWarning,
            stacklevel=2,
        )
    scale = np.where(const, 1.0, std)
    Xs = Xc / scale
    Xs[:, const] = 0.0
    return Dataset(Xs, d.y.copy())


def normalize_rows(d: Dataset) -> Dataset:
    """Scale each nonzero row to unit Euclidean norm; zero rows are kept."""
    # unit rows are left bit-identical so the map is exactly idempotent
    unit = np.sqrt(d.row_sqnorms()) == 1.0
    # divide by the row max first so tiny or huge entries neither underflow nor overflow
    if d.is_sparse:
        peak = abs(d.X).max(axis=1).toarray().ravel()
    else:
        peak = np.abs(d.X).max(axis=1) if d.p else np.zeros(d.T)
    peak = np.where((peak == 0.0) | unit, 1.0, peak)
    if d.is_sparse:
        Y = sparse.diags(1.0 / peak) @ d.X
    else:
        Y = d.X / peak[:, None]
    norms = np.sqrt(Dataset(Y, d.y).row_sqnorms())
    scale = np.where((norms == 0.0) | unit, 1.0, norms)
    if d.is_sparse:
        X = sparse.diags(1.0 / scale) @ Y
    else:
        X = Y / scale[:, None]
    out = Dataset(X, d.y.copy())
    return out
