import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numba import njit

from bismarck import (ConvergencePolicy, Dataset, ExecutionScheme, Regularizer,
                      StepSizeSchedule, TaskSpec, initialize, partition, run_epoch,
                      run_epoch_averaging, run_epoch_shared, train)
from bismarck._atomics import atomic_add_f64, spin_acquire, spin_release
from bismarck.ingest import portfolio_dataset
from bismarck.ordering import OrderingStrategy
from bismarck.parallel import EpochRunner, SharedModel, default_workers
from bismarck.synth import dense_classification, rank1_matrix, sparse_classification


@given(st.integers(1, 500), st.integers(1, 16))
def test_partition_covers_balanced(N, p):
    if p > N:
        with pytest.raises(ValueError):
            partition(N, p)
        return
    segs = partition(N, p)
    assert len(segs) == p
    assert np.array_equal(np.concatenate(segs), np.arange(N))
    sizes = [s.size for s in segs]
    assert max(sizes) - min(sizes) <= 1


def test_partition_of_order():
    segs = partition(np.array([5, 3, 1, 0]), 2)
    assert [s.tolist() for s in segs] == [[5, 3], [1, 0]]


def test_scheme_names():
    assert ExecutionScheme("SharedNoLock", 4).kind == "nolock"
    assert ExecutionScheme("seq", 8).workers == 1
    with pytest.raises(ValueError):
        ExecutionScheme("hogwild")
    with pytest.raises(ValueError):
        ExecutionScheme("aig", 0)


def test_threads_env(monkeypatch):
    monkeypatch.setenv("BISMARCK_THREADS", "3")
    assert default_workers() == 3


def _problem():
    ds = sparse_classification(600, 50, 6, seed=4)
    task = TaskSpec.for_dataset("lr", ds, Regularizer("l1", 0.5))
    return ds, task, StepSizeSchedule("divergent", 2.0)


def _seq_epochs(ds, task, sched, n=2):
    s = initialize(task)
    for _ in range(n):
        s = run_epoch(ds, s, task, sched)
    return s


def test_averaging_one_segment_is_sequential():
    ds, task, sched = _problem()
    ref = _seq_epochs(ds, task, sched)
    s = initialize(task)
    for _ in range(2):
        s = run_epoch_averaging(ds, s, task, sched, 1)
    assert s.model == ref.model
    assert s.step_count == ref.step_count


@pytest.mark.parametrize("kind", ["lock", "aig", "nolock"])
def test_shared_one_worker_is_sequential(kind):
    ds, task, sched = _problem()
    ref = _seq_epochs(ds, task, sched)
    shared = SharedModel.from_state(initialize(task))
    for _ in range(2):
        run_epoch_shared(ds, shared, task, sched, kind, 1)
    assert shared.model == ref.model


def test_averaging_merges_segment_models():
    ds, task, sched = _problem()
    s0 = initialize(task)
    out = run_epoch_averaging(ds, s0, task, sched, 3)
    segs = partition(len(ds), 3)
    parts = [run_epoch(ds, initialize(task), task, sched, seg).model.w for seg in segs]
    expected = sum(seg.size * w for seg, w in zip(segs, parts)) / len(ds)
    assert np.allclose(out.model.w, expected, rtol=1e-12, atol=1e-15)
    assert out.step_count == len(ds)


def test_lmf_shared_and_averaging_run():
    ds, _ = rank1_matrix(20, 15, seed=3)
    task = TaskSpec.for_dataset("lmf", ds, Regularizer("l2", 0.01), rank=2)
    sched = StepSizeSchedule("divergent", 0.05)
    for kind in ("avg", "lock", "aig", "nolock"):
        runner = EpochRunner(ExecutionScheme(kind, 3), task, sched)
        s = initialize(task, seed=1)
        before = s.model.copy()
        s = runner(ds, np.arange(len(ds)), s)
        assert s.model.is_finite() and not s.model == before


def test_aig_rejects_simplex():
    task = TaskSpec("portfolio", p=np.ones(3), sigma=np.eye(3))
    shared = SharedModel.from_state(initialize(task))
    with pytest.raises(ValueError):
        run_epoch_shared(portfolio_dataset(), shared, task, StepSizeSchedule(), "aig", 1)


def test_shared_rejects_non_shared_scheme():
    ds, task, sched = _problem()
    with pytest.raises(ValueError):
        run_epoch_shared(ds, SharedModel.from_state(initialize(task)), task, sched, "avg", 2)


@pytest.mark.parametrize("kind", ["avg", "lock", "aig", "nolock"])
def test_schemes_reach_sequential_objective(kind):
    raw = dense_classification(4000, 10, seed=5)
    ds = Dataset.dense(raw.X / np.sqrt(10), raw.y)
    task = TaskSpec.for_dataset("lr", ds, Regularizer("l2", 1.0))
    sched = StepSizeSchedule("divergent", 1500.0)
    policy = ConvergencePolicy("rel", 200, rel_tolerance=1e-7)
    order = OrderingStrategy("shuffle-once", 2)
    ref = train(ds, task, sched, policy, order).final_objective
    got = train(ds, task, sched, policy, order, scheme=ExecutionScheme(kind, 4)).final_objective
    assert got <= ref * (1 + 1e-3)


# ------------------------------------------------------------------ atomics


@njit(nogil=True)
def _hammer(arr, delta, n):
    for _ in range(n):
        atomic_add_f64(arr, 0, delta)


@njit(nogil=True)
def _locked_incr(arr, lock, n):
    for _ in range(n):
        spin_acquire(lock)
        arr[0] += 1.0
        spin_release(lock)


def _threads(fn, args_list):
    ts = [threading.Thread(target=fn, args=a) for a in args_list]
    for t in ts:
        t.start()
    for t in ts:
        t.join()


def test_aig_torture_no_lost_updates():
    delta = 2.0**-10
    n = 10**6
    arr = np.zeros(1)
    _hammer(arr, 0.0, 1)  # compile outside the threads
    _threads(_hammer, [(arr, delta, n), (arr, delta, n), (arr, delta, n), (arr, -delta, n)])
    assert arr[0] == 2 * n * delta


def test_spin_lock_mutual_exclusion():
    arr = np.zeros(1)
    lock = np.zeros(1, dtype=np.int64)
    _locked_incr(arr, lock, 1)
    arr[0] = 0.0
    _threads(_locked_incr, [(arr, lock, 200000)] * 4)
    assert arr[0] == 800000.0
    assert lock[0] == 0
