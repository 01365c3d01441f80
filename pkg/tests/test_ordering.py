import numpy as np
import pytest
from hypothesis import given, strategies as st

from bismarck import (AggState, ConvergencePolicy, Dataset, Model, StepSizeSchedule, TaskSpec,
                      catx_closed_form, gen_catx, initialize, permute, run_epoch, train, transition)
from bismarck.ordering import EpochOrder, OrderingStrategy, is_permutation, physical_rewrite
from bismarck.synth import rank1_matrix, sparse_classification


@given(st.sampled_from(["clustered", "shuffle-once", "shuffle-always"]),
       st.integers(0, 2**32), st.integers(0, 50), st.integers(1, 300))
def test_permute_is_permutation(kind, seed, epoch, N):
    assert is_permutation(permute(OrderingStrategy(kind, seed), epoch, N), N)


def test_permute_semantics():
    N = 200
    assert np.array_equal(permute(OrderingStrategy("clustered"), 5, N), np.arange(N))
    once = OrderingStrategy("shuffle-once", 11)
    assert np.array_equal(permute(once, 0, N), permute(once, 9, N))
    always = OrderingStrategy("shuffle-always", 11)
    assert not np.array_equal(permute(always, 0, N), permute(always, 1, N))
    assert np.array_equal(permute(always, 3, N), permute(always, 3, N))
    assert not np.array_equal(permute(once, 0, N), permute(OrderingStrategy("shuffle-once", 12), 0, N))


def test_ordering_validation():
    with pytest.raises(ValueError):
        OrderingStrategy("random")
    with pytest.raises(ValueError):
        OrderingStrategy("shuffle-once", -1)
    with pytest.raises(ValueError):
        permute(OrderingStrategy(), 0, 0)


def test_is_permutation_rejects():
    assert not is_permutation([0, 0, 2], 3)
    assert not is_permutation([0, 1], 3)


@pytest.mark.parametrize("make", [
    lambda: gen_catx(7),
    lambda: sparse_classification(50, 30, 4, seed=1),
    lambda: rank1_matrix(6, 5, seed=2)[0],
])
def test_physical_rewrite_preserves_rows(make, tmp_path):
    ds = make()
    sigma = permute(OrderingStrategy("shuffle-once", 3), 0, len(ds))
    out = physical_rewrite(ds, sigma, spool_dir=str(tmp_path))
    assert out.kind == ds.kind and len(out) == len(ds)
    for pos in (0, len(ds) // 2, len(ds) - 1):
        a, b = out[pos], ds[int(sigma[pos])]
        assert a.y == b.y
        assert repr(a) == repr(b)
    assert list(tmp_path.iterdir()) == []


def test_physical_and_logical_epochs_agree():
    ds = sparse_classification(300, 40, 5, seed=9)
    task = TaskSpec.for_dataset("lr", ds)
    sched = StepSizeSchedule("divergent", 1.0)
    strat = OrderingStrategy("shuffle-always", 5)
    logical, physical = EpochOrder(ds, strat), EpochOrder(ds, strat, physical=True)
    a = b = initialize(task)
    for epoch in range(3):
        data, order = logical(epoch)
        a = run_epoch(data, a, task, sched, order)
        data, order = physical(epoch)
        b = run_epoch(data, b, task, sched, order)
    assert a.model == b.model


def test_shuffle_once_rewrites_once():
    ds = gen_catx(20)
    eo = EpochOrder(ds, OrderingStrategy("shuffle-once", 1), physical=True)
    first = eo(0)
    assert eo(5) is first


# ------------------------------------------------------------------ CA-TX


def test_gen_catx_layout():
    ds = gen_catx(3)
    assert len(ds) == 6
    assert ds.X.ravel().tolist() == [1.0] * 6
    assert ds.y.tolist() == [1, 1, 1, -1, -1, -1]
    with pytest.raises(ValueError):
        gen_catx(0)


def test_closed_form_small_cases():
    assert catx_closed_form(0.5, 0.1, [1.0, -1.0], 0) == 0.5
    # w1 = 0.9*0.5 + 0.1 = 0.55; w2 = 0.9*0.55 - 0.1 = 0.395
    assert catx_closed_form(0.5, 0.1, [1.0, -1.0], 2) == pytest.approx(0.395, abs=1e-15)
    with pytest.raises(ValueError):
        catx_closed_form(0.0, 0.1, [1.0], 2)


def test_igd_matches_closed_form_every_step(rng):
    n = 25
    ds = gen_catx(n)
    task = TaskSpec("ls", dim=1)
    for _ in range(20):
        w0 = float(rng.normal(scale=3.0))
        alpha = float(rng.uniform(0.001, 0.999))
        order = rng.permutation(2 * n)
        labels = ds.y[order]
        sched = StepSizeSchedule("constant", alpha)
        state = AggState(Model.vector([w0]))
        for k, i in enumerate(order, start=1):
            state = transition(state, ds[int(i)], task, sched)
            assert abs(state.model.w[0] - catx_closed_form(w0, alpha, labels, k)) <= 1e-9


def test_catx_clustered_is_slow():
    ds = gen_catx(500)
    task = TaskSpec("ls", dim=1)
    sched = StepSizeSchedule("divergent", 0.7)
    policy = ConvergencePolicy("fixed", 60)
    rand = train(ds, task, sched, policy, OrderingStrategy("shuffle-once", 0))
    clus = train(ds, task, sched, policy, OrderingStrategy("clustered"))
    assert rand.final_objective < clus.final_objective
    assert abs(rand.model.w[0]) < abs(clus.model.w[0])


def test_dataset_take_identity():
    ds = Dataset.dense(np.arange(6.0).reshape(3, 2), [1.0, 2.0, 3.0])
    assert ds.take(np.array([2, 0, 1])).y.tolist() == [3.0, 1.0, 2.0]
