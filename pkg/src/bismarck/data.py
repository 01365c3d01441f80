"""In-memory datasets in kernel-friendly array form.

Stored order is file order; that order *is* the clustered ordering.
"""
import hashlib

import numpy as np

from .tasks import Example


class Dataset:
    """Immutable collection of examples of one kind.

    * ``dense``: ``X`` (N x d), ``y`` (N,)
    * ``sparse``: CSR triple ``indptr``/``indices``/``values`` plus ``y``
    * ``cells``: ``rows``/``cols`` with cell values in ``y``
    """

    def __init__(self, kind, y, X=None, indptr=None, indices=None, values=None,
                 rows=None, cols=None, dim=None, shape=None):
        self.kind = kind
        self.y = np.ascontiguousarray(y, dtype=np.float64)
        if kind == "dense":
            self.X = np.ascontiguousarray(X, dtype=np.float64)
            if self.X.ndim != 2 or self.X.shape[0] != self.y.size:
                raise ValueError("X must be N x d and match y")
            inferred = self.X.shape[1]
            if dim is not None and dim != inferred:
                raise ValueError(f"declared dimension {dim} != {inferred} columns")
            self.dim = inferred
        elif kind == "sparse":
            self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
            self.indices = np.ascontiguousarray(indices, dtype=np.int64)
            self.values = np.ascontiguousarray(values, dtype=np.float64)
            if self.indptr.size != self.y.size + 1 or self.indptr[-1] != self.indices.size:
                raise ValueError("malformed CSR arrays")
            inferred = int(self.indices.max()) + 1 if self.indices.size else 1
            if dim is not None:
                if dim < inferred:
                    raise ValueError(f"declared dimension {dim} < 1 + max index {inferred - 1}")
                inferred = dim
            self.dim = inferred
        elif kind == "cells":
            self.rows = np.ascontiguousarray(rows, dtype=np.int64)
            self.cols = np.ascontiguousarray(cols, dtype=np.int64)
            if self.rows.size != self.y.size or self.cols.size != self.y.size:
                raise ValueError("rows/cols/values differ in length")
            if self.y.size and (self.rows.min() < 0 or self.cols.min() < 0):
                raise ValueError("negative cell index")
            m = int(self.rows.max()) + 1 if self.y.size else 1
            n = int(self.cols.max()) + 1 if self.y.size else 1
            if shape is not None:
                if shape[0] < m or shape[1] < n:
                    raise ValueError(f"declared shape {shape} smaller than observed ({m}, {n})")
                m, n = shape
            self.shape = (int(m), int(n))
            self.row_counts = np.bincount(self.rows, minlength=m).astype(np.float64)
            self.col_counts = np.bincount(self.cols, minlength=n).astype(np.float64)
        else:
            raise ValueError(f"unknown dataset kind {kind!r}")
        self._checksum = None
        self._row_absmax = None

    # constructors --------------------------------------------------------

    @classmethod
    def dense(cls, X, y, dim=None):
        return cls("dense", y, X=X, dim=dim)

    @classmethod
    def sparse(cls, indptr, indices, values, y, dim=None):
        return cls("sparse", y, indptr=indptr, indices=indices, values=values, dim=dim)

    @classmethod
    def cells(cls, rows, cols, values, shape=None):
        return cls("cells", values, rows=rows, cols=cols, shape=shape)

    @classmethod
    def from_examples(cls, examples, dim=None, shape=None):
        examples = list(examples)
        if not examples:
            raise ValueError("empty dataset")
        kind = examples[0].kind
        if any(e.kind != kind for e in examples):
            raise ValueError("mixed example kinds")
        y = [e.y for e in examples]
        if kind == "dense":
            return cls.dense(np.vstack([e.x for e in examples]), y, dim=dim)
        if kind == "sparse":
            lens = [e.indices.size for e in examples]
            indptr = np.concatenate([[0], np.cumsum(lens)])
            idx = np.concatenate([e.indices for e in examples]) if indptr[-1] else np.zeros(0)
            val = np.concatenate([e.values for e in examples]) if indptr[-1] else np.zeros(0)
            return cls.sparse(indptr, idx, val, y, dim=dim)
        return cls.cells([e.i for e in examples], [e.j for e in examples], y, shape=shape)

    # access --------------------------------------------------------------

    def __len__(self):
        return self.y.size

    def __getitem__(self, i):
        i = int(i)
        if self.kind == "dense":
            return Example.dense(self.X[i], self.y[i])
        if self.kind == "sparse":
            lo, hi = self.indptr[i], self.indptr[i + 1]
            return Example("sparse", self.y[i], indices=self.indices[lo:hi].copy(),
                           values=self.values[lo:hi].copy())
        return Example("cell", self.y[i], i=int(self.rows[i]), j=int(self.cols[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def format(self):
        return {"dense": "DenseCsv", "sparse": "SparseIndexed", "cells": "MatrixTriples"}[self.kind]

    @property
    def dims(self):
        return self.shape if self.kind == "cells" else (self.dim,)

    @property
    def nbytes(self):
        return sum(a.nbytes for a in self.arrays())

    def arrays(self):
        if self.kind == "dense":
            return (self.X, self.y)
        if self.kind == "sparse":
            return (self.indptr, self.indices, self.values, self.y)
        return (self.rows, self.cols, self.y)

    @property
    def checksum(self):
        if self._checksum is None:
            h = hashlib.sha256()
            for a in self.arrays():
                h.update(np.ascontiguousarray(a).tobytes())
            self._checksum = h.hexdigest()
        return self._checksum

    @property
    def row_absmax(self):
        """``max_j |x_ij|`` per row (dense and sparse only); bounds one step's change."""
        if self._row_absmax is None:
            if self.kind == "dense":
                m = np.abs(self.X).max(axis=1) if self.X.shape[1] else np.zeros(len(self))
            else:
                a = np.abs(self.values)
                m = np.zeros(len(self))
                nz = np.flatnonzero(np.diff(self.indptr))
                if nz.size:
                    m[nz] = np.maximum.reduceat(a, self.indptr[nz])
            self._row_absmax = np.ascontiguousarray(m, dtype=np.float64)
        return self._row_absmax

    def take(self, index):
        """Materialize the examples at ``index`` (in that order) as a new dataset."""
        index = np.asarray(index, dtype=np.int64)
        if self.kind == "dense":
            return Dataset.dense(self.X[index], self.y[index])
        if self.kind == "sparse":
            lo = self.indptr[index]
            lens = self.indptr[index + 1] - lo
            indptr = np.concatenate([[0], np.cumsum(lens)])
            gather = np.repeat(lo - indptr[:-1], lens) + np.arange(indptr[-1])
            return Dataset.sparse(indptr, self.indices[gather], self.values[gather],
                                  self.y[index], dim=self.dim)
        return Dataset.cells(self.rows[index], self.cols[index], self.y[index], shape=self.shape)

    def to_dense(self):
        if self.kind != "sparse":
            return self
        X = np.zeros((len(self), self.dim))
        rows = np.repeat(np.arange(len(self)), np.diff(self.indptr))
        X[rows, self.indices] = self.values
        return Dataset.dense(X, self.y)

    def __repr__(self):
        return f"Dataset({self.kind}, N={len(self)}, dims={self.dims})"
