from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class Model:
    """Optimization variable: a coefficient vector, or a factor pair (L, R) for LMF."""

    w: np.ndarray | None = None
    L: np.ndarray | None = None
    R: np.ndarray | None = None

    def __post_init__(self):
        if self.w is None and (self.L is None or self.R is None):
            raise ValueError("model needs either w or both L and R")
        if self.w is not None:
            self.w = np.ascontiguousarray(self.w, dtype=np.float64).reshape(-1)
            if self.w.size < 1:
                raise ValueError("model dimension must be >= 1")
        else:
            self.L = np.ascontiguousarray(self.L, dtype=np.float64)
            self.R = np.ascontiguousarray(self.R, dtype=np.float64)
            if self.L.ndim != 2 or self.R.ndim != 2 or self.L.shape[1] != self.R.shape[1]:
                raise ValueError("factors must be 2-D with a shared rank")
            if self.L.shape[1] < 1:
                raise ValueError("rank must be >= 1")

    @classmethod
    def vector(cls, w):
        return cls(w=w)

    @classmethod
    def factors(cls, L, R):
        return cls(L=L, R=R)

    @property
    def kind(self):
        return "vector" if self.w is not None else "factors"

    @property
    def shape(self):
        if self.w is not None:
            return (self.w.size,)
        return (self.L.shape[0], self.R.shape[0], self.L.shape[1])

    @property
    def rank(self):
        return None if self.L is None else self.L.shape[1]

    def copy(self):
        if self.w is not None:
            return Model(w=self.w.copy())
        return Model(L=self.L.copy(), R=self.R.copy())

    def arrays(self):
        return (self.w,) if self.w is not None else (self.L, self.R)

    def is_finite(self):
        return all(np.isfinite(a).all() for a in self.arrays())

    def allclose(self, other, atol=0.0, rtol=0.0):
        if self.shape != other.shape or self.kind != other.kind:
            return False
        return all(np.allclose(a, b, atol=atol, rtol=rtol)
                   for a, b in zip(self.arrays(), other.arrays()))

    def __eq__(self, other):
        if not isinstance(other, Model):
            return NotImplemented
        if self.kind != other.kind or self.shape != other.shape:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    def __repr__(self):
        if self.w is not None:
            return f"Model(w={self.w!r})"
        return f"Model(L.shape={self.L.shape}, R.shape={self.R.shape})"
