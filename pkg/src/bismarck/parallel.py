"""Execution schemes: shared-nothing model averaging and shared-memory updates.

Workers are threads running ``nogil`` kernels, so they execute truly in
parallel when cores are available.  Each worker advances a private step
counter over its own segment, starting from ``step_count // p``.
"""
import os
import threading
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .core import AggState, _check_dataset, epoch_kernel, merge
from .errors import NonFiniteError

SCHEMES = ("seq", "avg", "lock", "aig", "nolock")
_ALIASES = {"sequential": "seq", "modelaveraging": "avg", "sharedlock": "lock",
            "sharedaig": "aig", "sharednolock": "nolock"}
_MODES = {"lock": K.M_LOCK, "aig": K.M_AIG, "nolock": K.M_PLAIN}


def default_workers():
    env = os.environ.get("BISMARCK_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class ExecutionScheme:
    kind: str = "seq"
    workers: int = 1

    def __post_init__(self):
        kind = _ALIASES.get(self.kind.lower(), self.kind.lower())
        if kind not in SCHEMES:
            raise ValueError(f"unknown execution scheme {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if kind == "seq":
            object.__setattr__(self, "workers", 1)

    @property
    def shared(self):
        return self.kind in _MODES


def partition(data, p):
    """Split ``data`` (a length or an index sequence) into p contiguous, balanced segments."""
    index = np.arange(data, dtype=np.int64) if np.isscalar(data) else np.asarray(data, np.int64)
    if p < 1:
        raise ValueError("p must be >= 1")
    if p > index.size:
        raise ValueError(f"cannot split {index.size} examples into {p} segments")
    return np.array_split(index, p)


def _run_threads(jobs):
    """Run callables concurrently; return their results once every worker has joined."""
    if len(jobs) == 1:
        return [jobs[0]()]
    results = [None] * len(jobs)

    def wrap(i, fn):
        results[i] = fn()

    threads = [threading.Thread(target=wrap, args=(i, fn)) for i, fn in enumerate(jobs)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return results


def run_epoch_averaging(dataset, state, task, schedule, p, order=None):
    """Each segment trains its own copy of the model; the copies are merged by weighted average."""
    if order is None:
        order = np.arange(len(dataset), dtype=np.int64)
    segments = partition(order, p)
    _check_dataset(dataset, task, state.model)
    k_start = state.step_count // p
    branches = [AggState(state.model.copy(), k_start, 0) for _ in segments]

    def job(b, seg):
        return lambda: epoch_kernel(dataset, seg, b.model, task, schedule, b.step_count)

    results = _run_threads([job(b, seg) for b, seg in zip(branches, segments)])
    for b, seg, (k, bad) in zip(branches, segments, results):
        if bad >= 0:
            raise NonFiniteError(int(seg[bad]))
        b.step_count = k
        b.examples_seen = seg.size
    out = branches[0]
    for b in branches[1:]:
        out = merge(out, b)
    return AggState(out.model, state.step_count + len(order),
                    state.examples_seen + len(order), state.running_loss)


class SharedModel:
    """Model arrays updated in place by concurrent workers, plus the global lock word."""

    def __init__(self, model, step_count=0, examples_seen=0):
        self.model = model
        self.step_count = step_count
        self.examples_seen = examples_seen
        self.lock = np.zeros(1, dtype=np.int64)

    @classmethod
    def from_state(cls, state):
        return cls(state.model.copy(), state.step_count, state.examples_seen)

    def to_state(self, running_loss=0.0):
        return AggState(self.model.copy(), self.step_count, self.examples_seen, running_loss)

    @property
    def components(self):
        """Flat views over every component (the factor matrices are concatenated logically)."""
        return [a.reshape(-1) for a in self.model.arrays()]


def run_epoch_shared(dataset, shared, task, schedule, scheme, p, order=None):
    """p workers stream disjoint segments into one shared model under Lock, AIG or NoLock."""
    scheme = scheme if isinstance(scheme, ExecutionScheme) else ExecutionScheme(scheme, p)
    if not scheme.shared:
        raise ValueError(f"{scheme.kind} is not a shared-memory scheme")
    mode = _MODES[scheme.kind]
    if mode == K.M_AIG and task.regularizer.kind == "simplex":
        raise ValueError("simplex projection is not per-component; AIG cannot apply it")
    if order is None:
        order = np.arange(len(dataset), dtype=np.int64)
    segments = partition(order, p)
    _check_dataset(dataset, task, shared.model)
    k_start = shared.step_count // p

    def job(seg):
        return lambda: epoch_kernel(dataset, seg, shared.model, task, schedule, k_start,
                                    mode=mode, lock=shared.lock)

    results = _run_threads([job(seg) for seg in segments])
    for seg, (_, bad) in zip(segments, results):
        if bad >= 0:
            raise NonFiniteError(int(seg[bad]))
    shared.step_count += len(order)
    shared.examples_seen += len(order)
    return shared


class EpochRunner:
    """Callable ``(data, order, state) -> state`` running one epoch under a scheme."""

    def __init__(self, scheme, task, schedule):
        self.scheme = scheme
        self.task = task
        self.schedule = schedule

    def __call__(self, data, order, state):
        from .core import run_epoch
        s = self.scheme
        p = min(s.workers, len(order))
        if s.kind == "seq":
            return run_epoch(data, state, self.task, self.schedule, order)
        if s.kind == "avg":
            return run_epoch_averaging(data, state, self.task, self.schedule, p, order)
        shared = SharedModel.from_state(state)
        run_epoch_shared(data, shared, self.task, self.schedule, s, p, order)
        return shared.to_state(state.running_loss)
