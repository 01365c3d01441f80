"""Per-task objective terms, (sub)gradients and proximal operators.

The scalar formulas come from the compiled kernels so that what is tested
here is exactly what the training loops execute.
"""
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import DimensionMismatch
from .model import Model

TASKS = ("ls", "lr", "svm", "lmf", "portfolio")
REGULARIZERS = ("none", "l1", "l2", "nonneg", "simplex")
CLASSIFICATION = ("lr", "svm")

TASK_CODES = {"ls": K.LS, "lr": K.LR, "svm": K.SVM, "lmf": K.LMF, "portfolio": K.PORTFOLIO}
REG_CODES = {"none": K.R_NONE, "l1": K.R_L1, "l2": K.R_L2, "nonneg": K.R_NONNEG,
             "simplex": K.R_SIMPLEX}


class Example:
    """One training tuple: dense or sparse features with a label, or a matrix cell."""

    __slots__ = ("kind", "y", "x", "indices", "values", "i", "j")

    def __init__(self, kind, y, x=None, indices=None, values=None, i=None, j=None):
        self.kind = kind
        self.y = float(y)
        self.x = x
        self.indices = indices
        self.values = values
        self.i = i
        self.j = j

    @classmethod
    def dense(cls, x, y):
        return cls("dense", y, x=np.asarray(x, dtype=np.float64).reshape(-1))

    @classmethod
    def sparse(cls, indices, values, y):
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        val = np.asarray(values, dtype=np.float64).reshape(-1)
        if idx.size != val.size:
            raise ValueError("indices and values differ in length")
        if idx.size and (idx[0] < 0 or np.any(np.diff(idx) <= 0)):
            raise ValueError("sparse indices must be non-negative and strictly increasing")
        return cls("sparse", y, indices=idx, values=val)

    @classmethod
    def cell(cls, i, j, value):
        if i < 0 or j < 0:
            raise ValueError("cell indices must be non-negative")
        return cls("cell", value, i=int(i), j=int(j))

    @property
    def value(self):
        return self.y

    @property
    def max_index(self):
        if self.kind == "dense":
            return self.x.size - 1
        if self.kind == "sparse":
            return int(self.indices[-1]) if self.indices.size else -1
        return (self.i, self.j)

    def to_dense(self, d):
        if self.kind == "dense":
            return self
        x = np.zeros(d)
        x[self.indices] = self.values
        return Example.dense(x, self.y)

    def __eq__(self, other):
        if not isinstance(other, Example) or self.kind != other.kind or self.y != other.y:
            return False
        if self.kind == "dense":
            return np.array_equal(self.x, other.x)
        if self.kind == "sparse":
            return (np.array_equal(self.indices, other.indices)
                    and np.array_equal(self.values, other.values))
        return self.i == other.i and self.j == other.j

    def __repr__(self):
        if self.kind == "dense":
            return f"Example.dense({self.x.tolist()}, y={self.y})"
        if self.kind == "sparse":
            pairs = list(zip(self.indices.tolist(), self.values.tolist()))
            return f"Example.sparse({pairs}, y={self.y})"
        return f"Example.cell({self.i}, {self.j}, {self.y})"


@dataclass(frozen=True)
class Regularizer:
    kind: str = "none"
    mu: float = 0.0

    def __post_init__(self):
        if self.kind not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.kind!r}")
        if not self.mu >= 0:
            raise ValueError("regularization weight must be >= 0")

    @property
    def code(self):
        return REG_CODES[self.kind]

    def penalty(self, v):
        """P(v); constraints give 0 when feasible and inf otherwise."""
        v = np.asarray(v, dtype=np.float64)
        if self.kind == "l1":
            return self.mu * float(np.abs(v).sum())
        if self.kind == "l2":
            return self.mu * float(v @ v)
        if self.kind == "nonneg":
            return 0.0 if np.all(v >= 0) else np.inf
        if self.kind == "simplex":
            ok = np.all(v >= -1e-12) and abs(v.sum() - 1.0) <= 1e-9
            return 0.0 if ok else np.inf
        return 0.0


@dataclass(eq=False)
class TaskSpec:
    task: str
    dim: int = 0
    m: int = 0
    n: int = 0
    rank: int = 1
    regularizer: Regularizer = field(default_factory=Regularizer)
    p: np.ndarray | None = None
    sigma: np.ndarray | None = None
    row_counts: np.ndarray | None = None
    col_counts: np.ndarray | None = None
    penalty_counts: np.ndarray | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "portfolio":
            if self.regularizer.kind == "none":
                self.regularizer = Regularizer("simplex")
            if self.regularizer.kind != "simplex":
                raise ValueError("portfolio requires the simplex constraint")
            if self.p is None or self.sigma is None:
                raise ValueError("portfolio needs expected returns p and covariance sigma")
            self.p = np.ascontiguousarray(self.p, dtype=np.float64).reshape(-1)
            self.sigma = np.ascontiguousarray(self.sigma, dtype=np.float64)
            if self.sigma.shape != (self.p.size, self.p.size):
                raise DimensionMismatch("sigma must be d x d with d = len(p)")
            if np.abs(self.sigma - self.sigma.T).max(initial=0.0) > 1e-12:
                raise ValueError("sigma must be symmetric")
            self.dim = self.p.size
        if self.task == "lmf":
            if self.m < 1 or self.n < 1 or self.rank < 1:
                raise ValueError("lmf needs m, n, rank >= 1")
            self.row_counts = _counts(self.row_counts, self.m)
            self.col_counts = _counts(self.col_counts, self.n)
        elif self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if self.task != "lmf":
            self.penalty_counts = _counts(self.penalty_counts, self.dim)

    @property
    def code(self):
        return TASK_CODES[self.task]

    @property
    def is_classification(self):
        return self.task in CLASSIFICATION

    @property
    def mu(self):
        return self.regularizer.mu

    @property
    def step_mus(self):
        """Per-component penalty weight of one prox step.

        Component j's penalty is split evenly over the ``penalty_counts[j]``
        tuples that touch it, so a full epoch applies P exactly once.  With no
        counts (a TaskSpec built without data) each step applies the whole penalty.
        """
        return self.regularizer.mu / self.penalty_counts

    @classmethod
    def for_dataset(cls, task, dataset, regularizer=None, rank=1, **kw):
        """Build a TaskSpec whose dimensions (and LMF cell counts) come from ``dataset``."""
        reg = regularizer or Regularizer()
        if task == "lmf":
            m, n = dataset.shape
            return cls("lmf", m=m, n=n, rank=rank, regularizer=reg,
                       row_counts=dataset.row_counts, col_counts=dataset.col_counts, **kw)
        if task == "portfolio":
            return cls(task, regularizer=reg, **kw)
        if dataset.kind == "sparse":
            counts = np.bincount(dataset.indices, minlength=dataset.dim)
        else:
            counts = np.full(dataset.dim, len(dataset))
        return cls(task, dim=dataset.dim, regularizer=reg, penalty_counts=counts, **kw)

    def model_shape(self):
        if self.task == "lmf":
            return (self.m, self.n, self.rank)
        return (self.dim,)


def _counts(c, size):
    # components never observed get count 1 so the penalty split stays finite
    if c is None:
        return np.ones(size, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    if c.size != size:
        raise DimensionMismatch("count vector length mismatch")
    return np.where(c > 0, c, 1.0)


@dataclass(eq=False)
class GradientUpdate:
    """Touched components of a per-example gradient.

    Vector models: ``indices``/``deltas``.  Factor models: ``row``/``d_row``
    for L and ``col``/``d_col`` for R.
    """

    indices: np.ndarray | None = None
    deltas: np.ndarray | None = None
    row: int | None = None
    d_row: np.ndarray | None = None
    col: int | None = None
    d_col: np.ndarray | None = None

    def dense(self, d):
        out = np.zeros(d)
        out[self.indices] = self.deltas
        return out


def _check(task, model, example):
    if task.task == "portfolio":
        if model.w is None or model.w.size != task.dim:
            raise DimensionMismatch("portfolio model dimension mismatch")
        return
    if task.task == "lmf":
        if example.kind != "cell" or model.L is None:
            raise DimensionMismatch("lmf needs a factor model and a matrix cell")
        if not (0 <= example.i < model.L.shape[0] and 0 <= example.j < model.R.shape[0]):
            raise DimensionMismatch(f"cell ({example.i}, {example.j}) outside factor shapes")
        return
    if model.w is None:
        raise DimensionMismatch(f"{task.task} needs a vector model")
    d = model.w.size
    if example.kind == "dense":
        if example.x.size != d:
            raise DimensionMismatch(f"example has {example.x.size} features, model has {d}")
    elif example.kind == "sparse":
        if example.indices.size and example.indices[-1] >= d:
            raise DimensionMismatch(f"feature index {example.indices[-1]} >= dimension {d}")
    else:
        raise DimensionMismatch(f"{task.task} cannot use a matrix-cell example")


def dot(w, example):
    if example.kind == "dense":
        s = 0.0
        for a, b in zip(w, example.x):
            s += a * b
        return s
    s = 0.0
    for j, v in zip(example.indices, example.values):
        s += w[j] * v
    return s


def grad(task, model, example):
    """Per-example (sub)gradient, restricted to the components it touches."""
    _check(task, model, example)
    if task.task == "portfolio":
        w = model.w
        return GradientUpdate(indices=np.arange(w.size), deltas=task.p + 2.0 * task.sigma @ w)
    if task.task == "lmf":
        i, j = example.i, example.j
        li, rj = model.L[i], model.R[j]
        e = float(li @ rj) - example.value
        if task.regularizer.kind == "l2":
            mu_i = task.mu / task.row_counts[i]
            mu_j = task.mu / task.col_counts[j]
        else:
            mu_i = mu_j = 0.0
        return GradientUpdate(row=i, d_row=2.0 * e * rj + 2.0 * mu_i * li,
                              col=j, d_col=2.0 * e * li + 2.0 * mu_j * rj)
    c = K.scalar_coef(task.code, dot(model.w, example), example.y)
    if example.kind == "dense":
        return GradientUpdate(indices=np.arange(example.x.size), deltas=c * example.x)
    return GradientUpdate(indices=example.indices.copy(), deltas=c * example.values)


def loss_term(task, model, example):
    """f_i(model) for one example (the LMF Frobenius penalty is split per cell)."""
    _check(task, model, example)
    if task.task == "portfolio":
        w = model.w
        return float(task.p @ w + w @ task.sigma @ w)
    if task.task == "lmf":
        i, j = example.i, example.j
        li, rj = model.L[i], model.R[j]
        e = float(li @ rj) - example.value
        out = e * e
        if task.regularizer.kind == "l2":
            out += task.mu * (float(li @ li) / task.row_counts[i]
                              + float(rj @ rj) / task.col_counts[j])
        return out
    return float(K.scalar_loss(task.code, dot(model.w, example), example.y))


def prox(regularizer, v, alpha):
    """argmin_w ½||v - w||² + alpha P(w)."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    v = np.ascontiguousarray(v, dtype=np.float64).reshape(-1)
    out = np.empty_like(v)
    K.prox_vector(regularizer.code, v, float(alpha), float(regularizer.mu), out)
    return out


def predict_score(task, model, example):
    if task.task == "portfolio":
        raise ValueError("portfolio models have no prediction semantics")
    _check(task, model, example)
    if task.task == "lmf":
        return float(model.L[example.i] @ model.R[example.j])
    return dot(model.w, example)


def predict(task, model, example):
    """Class in {-1, +1} for LR/SVM (score 0 maps to +1), the fitted value otherwise."""
    score = predict_score(task, model, example)
    if task.is_classification:
        return 1.0 if score >= 0.0 else -1.0
    return score


__all__ = ["Example", "Regularizer", "TaskSpec", "GradientUpdate", "Model", "grad", "prox",
           "loss_term", "predict", "predict_score", "dot", "TASKS", "REGULARIZERS"]
