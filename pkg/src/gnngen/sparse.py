"""CSR adjacency storage and sparse@dense products with autodiff support."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .tensor import Tensor, ShapeError, _make


class AdjacencyError(ValueError):
    pass


@dataclass
class SparseAdjacency:
    """CSR matrix over n nodes. Values are plain float64; pattern is fixed."""

    n: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    _csr: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.row_offsets = np.asarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.asarray(self.col_indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.row_offsets) != self.n + 1:
            raise AdjacencyError("row_offsets must have length n+1")
        if np.any(np.diff(self.row_offsets) < 0):
            raise AdjacencyError("row_offsets must be nondecreasing")
        if self.col_indices.size and (
            self.col_indices.min() < 0 or self.col_indices.max() >= self.n
        ):
            raise AdjacencyError("column index out of range: corrupt adjacency")
        if not np.all(np.isfinite(self.values)):
            raise AdjacencyError("non-finite adjacency values")

    @classmethod
    def from_scipy(cls, m: sp.spmatrix) -> "SparseAdjacency":
        csr = m.tocsr()
        csr.sum_duplicates()
        out = cls(csr.shape[0], csr.indptr, csr.indices, csr.data)
        out._csr = csr.astype(np.float64)
        return out

    @classmethod
    def from_edges(cls, n: int, edges: np.ndarray, symmetrize: bool = True) -> "SparseAdjacency":
        """Build an unweighted adjacency from (E,2) index pairs, deduplicated."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise AdjacencyError("edge endpoint out of range")
        rows, cols = edges[:, 0], edges[:, 1]
        if symmetrize:
            rows, cols = np.concatenate([rows, cols]), np.concatenate([cols, rows])
        keep = rows != cols  # no self-loops in the raw adjacency
        m = sp.csr_matrix(
            (np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(n, n)
        )
        m.sum_duplicates()
        m.data[:] = 1.0
        return cls.from_scipy(m)

    @classmethod
    def identity(cls, n: int) -> "SparseAdjacency":
        return cls.from_scipy(sp.identity(n, format="csr"))

    def to_scipy(self) -> sp.csr_matrix:
        if self._csr is None:
            self._csr = sp.csr_matrix(
                (self.values, self.col_indices, self.row_offsets), shape=(self.n, self.n)
            )
        return self._csr

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    @property
    def nnz(self) -> int:
        return int(self.col_indices.size)

    def with_values(self, values: np.ndarray) -> "SparseAdjacency":
        return SparseAdjacency(self.n, self.row_offsets, self.col_indices, values)


def spmm(adj: SparseAdjacency, x: Tensor, values: Tensor | None = None) -> Tensor:
    """adj @ x. Differentiable w.r.t. x, and w.r.t. values when given."""
    if x.data.ndim != 2 or x.data.shape[0] != adj.n:
        raise ShapeError(f"spmm: expected ({adj.n}, d) input, got {x.data.shape}")
    if values is not None:
        csr = sp.csr_matrix(
            (values.data, adj.col_indices, adj.row_offsets), shape=(adj.n, adj.n)
        )
    else:
        csr = adj.to_scipy()
    data = csr @ x.data
    csr_t = csr.T.tocsr()

    def backward(g):
        out = [(x, csr_t @ g)]
        if values is not None:
            rows = np.repeat(np.arange(adj.n), np.diff(adj.row_offsets))
            gv = np.einsum("ed,ed->e", g[rows], x.data[adj.col_indices])
            out.append((values, gv))
        return out

    parents = (x,) if values is None else (x, values)
    return _make(data, parents, backward)
