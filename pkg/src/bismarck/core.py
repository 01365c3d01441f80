"""Incremental gradient descent as a three-phase aggregate.

``initialize`` -> ``transition`` per tuple -> ``terminate``, plus ``merge``
for combining independently computed partial states.  ``train`` wraps the
aggregate in the epoch loop with a convergence test after each pass.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .data import Dataset
from .errors import DimensionMismatch, NonFiniteError
from .model import Model
from .tasks import Example, TaskSpec, loss_term

LMF_INIT_SCALE = 0.01

_RUN = np.ones(1, dtype=np.int64)
_NOLOCK = np.zeros(1, dtype=np.int64)

SCHEDULES = ("constant", "geometric", "divergent")
SCHEDULE_CODES = {"constant": K.S_CONSTANT, "geometric": K.S_GEOMETRIC,
                  "divergent": K.S_DIVERGENT}


@dataclass(frozen=True)
class StepSizeSchedule:
    kind: str = "divergent"
    alpha0: float = 0.1
    rho: float = 0.5

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.kind!r}")
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be > 0")
        if self.kind == "geometric" and not 0 < self.rho < 1:
            raise ValueError("geometric schedule needs 0 < rho < 1")

    @property
    def code(self):
        return SCHEDULE_CODES[self.kind]

    def __call__(self, k):
        return step_size(self, k)

    def describe(self):
        if self.kind == "geometric":
            return f"geometric alpha0={self.alpha0!r} rho={self.rho!r}"
        return f"{self.kind} alpha0={self.alpha0!r}"


def step_size(schedule, k):
    """alpha_k: constant, alpha0 * rho**k, or alpha0 / (k + 1)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return K.step_size(schedule.code, schedule.alpha0, schedule.rho, k)


@dataclass(frozen=True)
class ConvergencePolicy:
    kind: str = "rel"
    max_epochs: int = 100
    rel_tolerance: float = 1e-3
    grad_norm_tolerance: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("fixed", "rel", "gradnorm"):
            raise ValueError(f"unknown convergence policy {self.kind!r}")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not (self.rel_tolerance > 0 and self.grad_norm_tolerance > 0):
            raise ValueError("tolerances must be > 0")


def converged(history, policy, grad_norm=None):
    if policy.kind == "fixed":
        return len(history) >= policy.max_epochs
    if policy.kind == "gradnorm":
        if grad_norm is None:
            raise ValueError("gradient-norm policy needs grad_norm")
        return grad_norm < policy.grad_norm_tolerance
    if len(history) < 2:
        return False
    prev, last = history[-2], history[-1]
    if prev == 0:
        return last == 0
    return abs(last - prev) / abs(prev) < policy.rel_tolerance


@dataclass(eq=False)
class AggState:
    """Aggregation context: the model plus step/example counters.

    ``running_loss`` holds the objective from the most recent loss pass; the
    transition itself never computes loss.
    """

    model: Model
    step_count: int = 0
    examples_seen: int = 0
    running_loss: float = 0.0

    def copy(self):
        return AggState(self.model.copy(), self.step_count, self.examples_seen, self.running_loss)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    objective: float
    cum_seconds: float
    epoch_seconds: float
    shuffle_seconds: float = 0.0


@dataclass(eq=False)
class TrainResult:
    model: Model
    records: list
    converged: bool
    seed: int = 0
    config: dict = field(default_factory=dict)

    @property
    def epochs_run(self):
        return len(self.records)

    @property
    def history(self):
        return [(r.epoch, r.objective, r.cum_seconds) for r in self.records]

    @property
    def objectives(self):
        return [r.objective for r in self.records]

    @property
    def final_objective(self):
        return self.records[-1].objective


# ------------------------------------------------------------ three phases


def _zero_model(task, seed):
    if task.task == "lmf":
        rng = np.random.default_rng(seed)
        L = rng.uniform(-LMF_INIT_SCALE, LMF_INIT_SCALE, size=(task.m, task.rank))
        R = rng.uniform(-LMF_INIT_SCALE, LMF_INIT_SCALE, size=(task.n, task.rank))
        return Model.factors(L, R)
    if task.task == "portfolio":
        return Model.vector(np.full(task.dim, 1.0 / task.dim))
    return Model.vector(np.zeros(task.dim))


def initialize(task, init=None, seed=0):
    """Fresh state: ``init`` if given, else zeros (small seeded noise for LMF factors).

    Portfolio starts at the simplex barycentre since zero is infeasible.
    """
    if init is None:
        model = _zero_model(task, seed)
    else:
        want = task.model_shape()
        if init.shape != want:
            raise DimensionMismatch(f"init model shape {init.shape} != task shape {want}")
        model = init.copy()
    return AggState(model)


def terminate(state):
    return state.model


def merge(a, b):
    """Examples-seen-weighted average of two partial states."""
    if a.model.kind != b.model.kind or a.model.shape != b.model.shape:
        raise DimensionMismatch("cannot merge states of different shapes")
    if b.examples_seen == 0:
        out = a.copy()
    elif a.examples_seen == 0:
        out = b.copy()
    else:
        na, nb = float(a.examples_seen), float(b.examples_seen)
        arrays = [(na * x + nb * y) / (na + nb)
                  for x, y in zip(a.model.arrays(), b.model.arrays())]
        model = Model.vector(arrays[0]) if len(arrays) == 1 else Model.factors(*arrays)
        out = AggState(model)
    out.step_count = a.step_count + b.step_count
    out.examples_seen = a.examples_seen + b.examples_seen
    out.running_loss = a.running_loss + b.running_loss
    return out


# --------------------------------------------------------- kernel dispatch


def _check_dataset(dataset, task, model):
    if task.task == "portfolio":
        return
    if task.task == "lmf":
        if dataset.kind != "cells":
            raise DimensionMismatch("lmf needs matrix-cell data")
        m, n = dataset.shape
        if m > model.L.shape[0] or n > model.R.shape[0]:
            raise DimensionMismatch(f"data shape {dataset.shape} exceeds factor shapes")
        return
    if dataset.kind == "cells":
        raise DimensionMismatch(f"{task.task} cannot use matrix-cell data")
    if dataset.dim != model.w.size:
        raise DimensionMismatch(f"data dimension {dataset.dim} != model dimension {model.w.size}")


def epoch_kernel(dataset, order, model, task, schedule, k0, mode=K.M_PLAIN, lock=None,
                 signal=None):
    """Fold the examples ``dataset[order]`` into ``model`` in place.

    Returns ``(k_end, bad)``; ``bad`` is the position of a non-finite update or -1.
    """
    lock = _NOLOCK if lock is None else lock
    signal = _RUN if signal is None else signal
    reg = task.regularizer.code
    s = (schedule.code, float(schedule.alpha0), float(schedule.rho))
    if task.task == "portfolio":
        return K.epoch_portfolio(task.p, task.sigma, order, model.w, k0, *s, signal)
    if task.task == "lmf":
        r = model.L.shape[1]
        return K.epoch_cells(reg, float(task.mu), dataset.rows, dataset.cols, dataset.y,
                             task.row_counts, task.col_counts, order,
                             model.L.reshape(-1), model.R.reshape(-1), r, k0, *s,
                             mode, lock, signal)
    if dataset.kind == "dense":
        return K.epoch_dense(task.code, reg, task.step_mus, dataset.X, dataset.y,
                             dataset.row_absmax, order, model.w, k0, *s, mode, lock, signal)
    return K.epoch_sparse(task.code, reg, task.step_mus, dataset.indptr, dataset.indices, dataset.values,
                          dataset.y, dataset.row_absmax, order, model.w, k0, *s, mode, lock, signal)


def _example_dataset(example, task, model):
    if task.task == "portfolio":
        return Dataset.dense(np.zeros((1, 0)), [0.0])
    if example.kind == "dense":
        return Dataset.dense(example.x[None, :], [example.y])
    if example.kind == "sparse":
        return Dataset.sparse([0, example.indices.size], example.indices, example.values,
                              [example.y], dim=model.w.size if model.w is not None else None)
    return Dataset.cells([example.i], [example.j], [example.y], shape=model.shape[:2])


_ONE = np.zeros(1, dtype=np.int64)


def transition(state, example, task, schedule):
    """One step: model <- prox_{alpha_k P}(model - alpha_k grad f_example(model))."""
    from .tasks import _check
    _check(task, state.model, example)
    model = state.model.copy()
    data = _example_dataset(example, task, model)
    k, bad = epoch_kernel(data, _ONE, model, task, schedule, state.step_count)
    if bad >= 0:
        raise NonFiniteError(state.step_count)
    return AggState(model, k, state.examples_seen + 1, state.running_loss)


def run_epoch(data, state, task, schedule, order=None):
    """Fold ``transition`` over one pass of ``data`` (a Dataset, or any iterable of Examples)."""
    if not isinstance(data, Dataset):
        for ex in data:
            state = transition(state, ex, task, schedule)
        return state
    if order is None:
        order = np.arange(len(data), dtype=np.int64)
    model = state.model.copy()
    if len(order) == 0:
        return AggState(model, state.step_count, state.examples_seen, state.running_loss)
    _check_dataset(data, task, model)
    k, bad = epoch_kernel(data, np.ascontiguousarray(order, dtype=np.int64), model, task,
                          schedule, state.step_count)
    if bad >= 0:
        raise NonFiniteError(state.step_count + bad)
    return AggState(model, k, state.examples_seen + len(order), state.running_loss)


# ------------------------------------------------------------ objectives


def compute_loss(data, model, task):
    """sum_i f(model, z_i) + P(model)."""
    reg = task.regularizer
    if isinstance(data, Dataset):
        _check_dataset(data, task, model)
        if task.task == "portfolio":
            w = model.w
            total = len(data) * float(task.p @ w + w @ task.sigma @ w)
        elif task.task == "lmf":
            total = K.loss_cells(reg.code, float(reg.mu), data.rows, data.cols, data.y,
                                 task.row_counts, task.col_counts, model.L.reshape(-1),
                                 model.R.reshape(-1), model.L.shape[1])
        elif data.kind == "dense":
            total = K.loss_dense(task.code, data.X, data.y, model.w)
        else:
            total = K.loss_sparse(task.code, data.indptr, data.indices, data.values, data.y,
                                  model.w)
    else:
        total = sum(loss_term(task, model, ex) for ex in data)
    total += _penalty(task, model)
    if not np.isfinite(total):
        raise NonFiniteError(-1, "objective is not finite")
    return float(total)


def _penalty(task, model):
    reg = task.regularizer
    if task.task == "lmf":
        if reg.kind == "l2":
            return 0.0
        return reg.penalty(np.concatenate([model.L.ravel(), model.R.ravel()]))
    return reg.penalty(model.w)


def full_gradient(data, model, task):
    """Gradient of the smooth part summed over all examples (flattened for LMF)."""
    if task.task == "portfolio":
        w = model.w
        return len(data) * (task.p + 2.0 * task.sigma @ w)
    if task.task == "lmf":
        gL = np.empty(model.L.size)
        gR = np.empty(model.R.size)
        K.grad_cells(task.regularizer.code, float(task.mu), data.rows, data.cols, data.y,
                     task.row_counts, task.col_counts, model.L.reshape(-1),
                     model.R.reshape(-1), model.L.shape[1], gL, gR)
        return np.concatenate([gL, gR])
    g = np.empty(model.w.size)
    if data.kind == "dense":
        K.grad_dense(task.code, data.X, data.y, model.w, g)
    else:
        K.grad_sparse(task.code, data.indptr, data.indices, data.values, data.y, model.w, g)
    return g


def gradient_norm(data, model, task):
    """Norm of the (proximal) gradient mapping; equals ||grad|| for smooth objectives."""
    g = full_gradient(data, model, task)
    reg = task.regularizer
    if task.task == "lmf":
        if reg.kind in ("none", "l2"):
            return float(np.linalg.norm(g))
        x = np.concatenate([model.L.ravel(), model.R.ravel()])
    else:
        x = model.w
        if reg.kind == "none":
            return float(np.linalg.norm(g))
        if reg.kind == "l2":
            return float(np.linalg.norm(g + 2.0 * reg.mu * x))
    from .tasks import prox
    return float(np.linalg.norm(x - prox(reg, x - g, 1.0)))


# ---------------------------------------------------------------- training


def train(dataset, task, schedule, policy=None, ordering=None, scheme=None, init=None, seed=0,
          physical_shuffle=False, time_budget=None, on_epoch=None):
    """Epoch loop: order -> run_epoch (via the execution scheme) -> loss -> converged?

    Wall time covers ordering plus gradient work; the loss pass is excluded.
    ``on_epoch(epoch, model)`` is called after each epoch's loss pass.
    """
    from .ordering import EpochOrder, OrderingStrategy
    from .parallel import ExecutionScheme, EpochRunner

    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    policy = policy or ConvergencePolicy()
    ordering = ordering or OrderingStrategy("clustered", seed)
    scheme = scheme or ExecutionScheme("seq")
    state = initialize(task, init, seed)
    order_for = EpochOrder(dataset, ordering, physical=physical_shuffle)
    runner = EpochRunner(scheme, task, schedule)

    records, losses = [], []
    cum = 0.0
    done = False
    for epoch in range(policy.max_epochs):
        t0 = time.perf_counter()
        data, order = order_for(epoch)
        t1 = time.perf_counter()
        state = runner(data, order, state)
        t2 = time.perf_counter()
        cum += t2 - t0
        loss = compute_loss(dataset, state.model, task)
        state.running_loss = loss
        losses.append(loss)
        records.append(EpochRecord(epoch, loss, cum, t2 - t1, t1 - t0))
        if on_epoch is not None:
            on_epoch(epoch, state.model)
        gn = gradient_norm(dataset, state.model, task) if policy.kind == "gradnorm" else None
        if converged(losses, policy, gn):
            done = True
            break
        if time_budget is not None and cum >= time_budget:
            break
    config = {"task": task.task, "schedule": schedule.describe(), "order": ordering.kind,
              "seed": ordering.seed, "scheme": scheme.kind, "workers": scheme.workers,
              "policy": policy.kind, "max_epochs": policy.max_epochs,
              "regularizer": task.regularizer.kind, "mu": task.mu}
    return TrainResult(state.model, records, done, seed=ordering.seed, config=config)


__all__ = ["AggState", "ConvergencePolicy", "EpochRecord", "StepSizeSchedule", "TrainResult",
           "Model", "Example", "TaskSpec", "initialize", "transition", "merge", "terminate",
           "step_size", "run_epoch", "compute_loss", "converged", "train", "gradient_norm",
           "full_gradient"]
