"""Reservoir sampling, subsample-then-train, and multiplexed reservoir sampling (MRS).

In MRS an I/O worker streams the data in stored order, reservoir-samples it
into one buffer, and takes a gradient step on every tuple the reservoir
drops.  A memory worker concurrently loops over the other (previously
filled) buffer.  Both update one model with unsynchronized writes.  Buffers
swap roles after each pass over the data.
"""
import threading
import time

import numpy as np

from . import _kernels as K
from .core import (ConvergencePolicy, EpochRecord, TrainResult, compute_loss, converged,
                   epoch_kernel, initialize)
from .errors import NonFiniteError

CHUNK = 1024


class Reservoir:
    """Fixed-capacity uniform sample of everything offered so far."""

    def __init__(self, capacity):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.slots = []
        self.seen = 0

    def __len__(self):
        return len(self.slots)

    def __iter__(self):
        return iter(self.slots)


def reservoir_offer(res, item, rng):
    """Offer ``item``; return whatever leaves the stream (None while filling).

    Once full, draw s uniform in [0, seen + 1).  If s hits a slot, the old
    occupant is displaced and returned; otherwise the incoming item is.
    """
    if res.seen < res.capacity:
        res.slots.append(item)
        res.seen += 1
        return None
    s = int(rng.integers(0, res.seen + 1))
    res.seen += 1
    if s < res.capacity:
        dropped = res.slots[s]
        res.slots[s] = item
        return dropped
    return item


def pass_draws(rng, m, N):
    """All draws one reservoir pass needs: the draw for offer ``seen`` lies in [0, seen + 1)."""
    if N <= m:
        return np.zeros(0, dtype=np.int64)
    return rng.integers(0, np.arange(m + 1, N + 1, dtype=np.int64)).astype(np.int64)


def reservoir_indices(N, m, rng):
    """One pass of reservoir sampling over ``range(N)``; returns the slot contents."""
    m = min(m, N)
    slots = np.empty(m, dtype=np.int64)
    counters = np.zeros(1, dtype=np.int64)
    dropped = np.empty(max(N - m, 0), dtype=np.int64)
    K.reservoir_chunk(0, N, slots, counters, pass_draws(rng, m, N), dropped)
    return slots


def _objective_loop(dataset, task, policy, time_budget, on_epoch, epoch_fn):
    """Shared epoch loop: epoch_fn(epoch) does the timed work; loss is measured on ``dataset``."""
    records, losses = [], []
    cum = 0.0
    done = False
    for epoch in range(policy.max_epochs):
        seconds, model = epoch_fn(epoch)
        cum += seconds
        loss = compute_loss(dataset, model, task)
        losses.append(loss)
        records.append(EpochRecord(epoch, loss, cum, seconds, 0.0))
        if on_epoch is not None:
            on_epoch(epoch, model)
        if converged(losses, policy):
            done = True
            break
        if time_budget is not None and cum >= time_budget:
            break
    return records, done


def subsample_train(dataset, B_size, task, schedule, policy=None, seed=0, time_budget=None,
                    on_epoch=None):
    """Reservoir-sample B_size tuples in one pass, then run epochs over the sample only.

    The reported objective is always over the full dataset; the sampling pass
    is charged to the first epoch's time.
    """
    if B_size < 1:
        raise ValueError("B_size must be >= 1")
    policy = policy or ConvergencePolicy()
    rng = np.random.default_rng(seed)
    state = initialize(task, seed=seed)
    model = state.model
    t0 = time.perf_counter()
    slots = reservoir_indices(len(dataset), B_size, rng)
    sample = dataset.take(slots)
    fill_seconds = time.perf_counter() - t0
    order = np.arange(len(sample), dtype=np.int64)
    k = [0]

    def epoch_fn(epoch):
        t = time.perf_counter()
        k[0], bad = epoch_kernel(sample, order, model, task, schedule, k[0])
        if bad >= 0:
            raise NonFiniteError(k[0] - 1)
        return time.perf_counter() - t + (fill_seconds if epoch == 0 else 0.0), model

    records, done = _objective_loop(dataset, task, policy, time_budget, on_epoch, epoch_fn)
    return TrainResult(model, records, done, seed=seed,
                       config={"mode": "subsample", "buffer": B_size, "task": task.task,
                               "schedule": schedule.describe(), "seed": seed})


def mrs_train(dataset, B_size, task, schedule, policy=None, seed=0, time_budget=None,
              memory_worker=True, on_epoch=None, trace=None):
    """Multiplexed reservoir sampling; one epoch is one I/O-worker pass over the data.

    ``trace``, if a list, receives the dataset indices the I/O worker steps on.
    """
    if B_size < 0:
        raise ValueError("B_size must be >= 0")
    policy = policy or ConvergencePolicy()
    N = len(dataset)
    m = min(B_size, N)
    rng = np.random.default_rng(seed)
    model = initialize(task, seed=seed).model
    buffers = [np.empty(m, dtype=np.int64), np.empty(m, dtype=np.int64)]
    filled = [0, 0]
    active = [0]
    signal = np.ones(1, dtype=np.int64)
    k_io = [0]
    k_mem = [0]
    failure = []
    dropped = np.empty(CHUNK, dtype=np.int64)

    def memory_loop(buf):
        while signal[0]:
            k, bad = epoch_kernel(dataset, buf, model, task, schedule, k_mem[0], signal=signal)
            k_mem[0] = k
            if bad >= 0:
                failure.append(int(buf[bad]))
                return

    def epoch_fn(epoch):
        t = time.perf_counter()
        fill = buffers[active[0]]
        other = 1 - active[0]
        mem_buf = buffers[other][:filled[other]]
        draws = pass_draws(rng, m, N)
        counters = np.zeros(1, dtype=np.int64)
        signal[0] = 1
        worker = None
        if memory_worker and mem_buf.size:
            worker = threading.Thread(target=memory_loop, args=(mem_buf,))
            worker.start()
        try:
            for start in range(0, N, CHUNK):
                stop = min(start + CHUNK, N)
                nd = K.reservoir_chunk(start, stop, fill, counters, draws, dropped)
                if nd:
                    step = dropped[:nd]
                    if trace is not None:
                        trace.extend(step.tolist())
                    k_io[0], bad = epoch_kernel(dataset, step, model, task, schedule, k_io[0])
                    if bad >= 0:
                        raise NonFiniteError(int(step[bad]))
        finally:
            signal[0] = 0
            if worker is not None:
                worker.join()
        if failure:
            raise NonFiniteError(failure[0])
        filled[active[0]] = m
        active[0] = other
        return time.perf_counter() - t, model

    records, done = _objective_loop(dataset, task, policy, time_budget, on_epoch, epoch_fn)
    return TrainResult(model, records, done, seed=seed,
                       config={"mode": "mrs", "buffer": B_size, "task": task.task,
                               "schedule": schedule.describe(), "seed": seed,
                               "memory_worker": memory_worker})
