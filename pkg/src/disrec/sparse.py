"""Compressed-sparse-row adjacency with symmetric-normalized edge weights.

Every graph the engine propagates over (the bipartite interaction graph in
its (m+n) x (m+n) block form, and the m x m social graph) is stored as a
:class:`SparseAdjacency`.  Instances are built once and never mutated, so
they are safe to share across concurrent forward passes.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = ["SparseAdjacency"]


class SparseAdjacency:
    """Immutable CSR matrix of positive, finite edge weights.

    Wraps a ``scipy.sparse.csr_matrix`` in canonical form (sorted column
    indices, no duplicates, no explicit zeros).  ``row_offsets``,
    ``col_indices`` and ``values`` expose the raw CSR arrays.
    """

    __slots__ = ("_matrix", "_transposed")

    def __init__(self, matrix: sp.csr_matrix):
        matrix = matrix.tocsr().astype(np.float64)
        matrix.sum_duplicates()
        matrix.sort_indices()
        matrix.eliminate_zeros()
        self._matrix = matrix
        self._transposed: SparseAdjacency | None = None
        self.validate()

    @classmethod
    def from_edges(cls, rows, cols, values, shape) -> "SparseAdjacency":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        return cls(sp.csr_matrix((values, (rows, cols)), shape=shape))

    @property
    def rows(self) -> int:
        return self._matrix.shape[0]

    @property
    def cols(self) -> int:
        return self._matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self._matrix.nnz

    @property
    def row_offsets(self) -> np.ndarray:
        return self._matrix.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self._matrix.indices

    @property
    def values(self) -> np.ndarray:
        return self._matrix.data

    def validate(self) -> None:
        """Check the CSR invariants; raises ``ValueError`` on violation."""
        m = self._matrix
        if m.indptr[0] != 0 or m.indptr[-1] != m.nnz:
            raise ValueError("row offsets do not span the value array")
        if np.any(np.diff(m.indptr) < 0):
            raise ValueError("row offsets are not monotone")
        if m.nnz:
            if m.indices.min() < 0 or m.indices.max() >= m.shape[1]:
                raise ValueError("column index out of bounds")
            if not np.all(np.isfinite(m.data)):
                raise ValueError("non-finite edge weight")
            if np.any(m.data <= 0):
                raise ValueError("non-positive edge weight")
            # sorted, duplicate-free columns within each row: column indices
            # must strictly increase except where a new row starts
            increases = np.diff(m.indices) > 0
            row_starts = np.zeros(m.nnz, dtype=bool)
            starts = m.indptr[1:-1]
            row_starts[starts[starts < m.nnz]] = True
            if not np.all(increases | row_starts[1:]):
                raise ValueError("unsorted or duplicate columns within a row")

    def propagate(self, dense: np.ndarray) -> np.ndarray:
        """One step of weighted neighbor aggregation: ``A @ dense``."""
        if dense.shape[0] != self.cols:
            raise ValueError(
                f"dimension mismatch: adjacency is {self.rows}x{self.cols}, "
                f"input has {dense.shape[0]} rows"
            )
        return self._matrix @ dense

    def transpose(self) -> "SparseAdjacency":
        """Transposed adjacency, cached after the first call."""
        if self._transposed is None:
            t = SparseAdjacency(self._matrix.T.tocsr())
            t._transposed = self
            self._transposed = t
        return self._transposed

    def to_dense(self) -> np.ndarray:
        return self._matrix.toarray()

    def is_symmetric(self, tol: float = 0.0) -> bool:
        diff = self._matrix - self._matrix.T
        if diff.nnz == 0:
            return True
        return bool(np.max(np.abs(diff.data)) <= tol)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseAdjacency):
            return NotImplemented
        a, b = self._matrix, other._matrix
        return (
            a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
        )

    def __hash__(self):  # identity-based; instances are immutable anyway
        return id(self)

    def __repr__(self) -> str:
        return f"SparseAdjacency({self.rows}x{self.cols}, nnz={self.nnz})"
