import numpy as np
import pytest
import scipy.optimize as so
from hypothesis import given, strategies as st

from bismarck import (AggState, ConvergencePolicy, Dataset, Example, Model, Regularizer,
                      StepSizeSchedule, TaskSpec, compute_loss, converged, initialize, merge,
                      run_epoch, step_size, terminate, train, transition)
from bismarck.core import full_gradient, gradient_norm
from bismarck.errors import DimensionMismatch, NonFiniteError
from bismarck.ordering import OrderingStrategy
from bismarck.synth import dense_classification, dense_regression, rank1_matrix


# ------------------------------------------------------------------ schedules


@pytest.mark.parametrize("schedule,k,expected", [
    (StepSizeSchedule("constant", 0.1), 999, 0.1),
    (StepSizeSchedule("geometric", 1.0, 0.5), 3, 0.125),
    (StepSizeSchedule("divergent", 1.0), 3, 0.25),
    (StepSizeSchedule("divergent", 2.0), 0, 2.0),
])
def test_step_size_examples(schedule, k, expected):
    assert step_size(schedule, k) == expected
    assert schedule(k) == expected


def test_divergent_series_conditions():
    s = StepSizeSchedule("divergent", 1.0)
    partial = float(np.sum([step_size(s, k) for k in range(10**6 + 1)]))
    assert partial > 10
    assert step_size(s, 10**6) < 1e-5
    assert step_size(s, 10**6) > 0


@given(st.integers(0, 10**7), st.floats(1e-6, 10.0), st.floats(0.01, 0.99))
def test_step_sizes_positive(k, alpha0, rho):
    for kind in ("constant", "geometric", "divergent"):
        a = step_size(StepSizeSchedule(kind, alpha0, rho), k)
        assert a >= 0 and np.isfinite(a)
        if kind != "geometric":
            assert a > 0


@pytest.mark.parametrize("kwargs", [
    {"kind": "constant", "alpha0": 0.0},
    {"kind": "divergent", "alpha0": -1.0},
    {"kind": "geometric", "alpha0": 1.0, "rho": 1.0},
    {"kind": "geometric", "alpha0": 1.0, "rho": 0.0},
    {"kind": "cosine"},
])
def test_bad_schedules(kwargs):
    with pytest.raises(ValueError):
        StepSizeSchedule(**kwargs)


def test_negative_step_index():
    with pytest.raises(ValueError):
        step_size(StepSizeSchedule(), -1)


# ------------------------------------------------------------------ phases


def test_transition_closed_form():
    # f(w) = (w x - y)^2 / 2 with x = 1, y = 0 and constant alpha: w_k = w0 (1 - alpha)^k
    task = TaskSpec("ls", dim=1)
    sched = StepSizeSchedule("constant", 0.5)
    ex = Example.dense([1.0], 0.0)
    state = initialize(task, init=Model.vector([3.0]))
    for k in range(1, 30):
        state = transition(state, ex, task, sched)
        assert state.model.w[0] == pytest.approx(3.0 * 0.5**k, abs=1e-15)
        assert state.step_count == k and state.examples_seen == k


def test_transition_does_not_mutate_input():
    task = TaskSpec("ls", dim=2)
    state = initialize(task, init=Model.vector([1.0, 2.0]))
    transition(state, Example.dense([1.0, 1.0], 0.0), task, StepSizeSchedule("constant", 0.1))
    assert state.model.w.tolist() == [1.0, 2.0] and state.step_count == 0


def test_transition_sparse_touches_only_its_components():
    task = TaskSpec("lr", dim=6, regularizer=Regularizer("l1", 0.5))
    w0 = np.array([1.0, -1.0, 2.0, 0.3, -0.2, 4.0])
    state = initialize(task, init=Model.vector(w0))
    new = transition(state, Example.sparse([1, 4], [1.0, 2.0], 1.0), task,
                     StepSizeSchedule("constant", 0.1)).model.w
    untouched = [0, 2, 3, 5]
    assert np.array_equal(new[untouched], w0[untouched])
    assert not np.array_equal(new[[1, 4]], w0[[1, 4]])


def test_lmf_transition_touches_one_row_and_column():
    task = TaskSpec("lmf", m=4, n=3, rank=2, regularizer=Regularizer("l2", 0.1))
    state = initialize(task, seed=3)
    L0, R0 = state.model.L.copy(), state.model.R.copy()
    after = transition(state, Example.cell(2, 1, 5.0), task, StepSizeSchedule("constant", 0.1))
    dL = np.any(after.model.L != L0, axis=1)
    dR = np.any(after.model.R != R0, axis=1)
    assert dL.tolist() == [False, False, True, False]
    assert dR.tolist() == [False, True, False]


def test_initialize_shapes_and_seeded_lmf():
    t = TaskSpec("lmf", m=5, n=4, rank=3)
    a, b = initialize(t, seed=9), initialize(t, seed=9)
    assert a.model == b.model and a.model.shape == (5, 4, 3)
    assert np.all(np.abs(a.model.L) <= 0.01)
    with pytest.raises(DimensionMismatch):
        initialize(TaskSpec("ls", dim=3), init=Model.vector([0.0, 0.0]))


def test_lmf_init_golden():
    state = initialize(TaskSpec("lmf", m=3, n=2, rank=2), seed=42)
    golden = np.loadtxt("tests/golden/lmf_init_seed42.txt")
    got = np.concatenate([state.model.L.ravel(), state.model.R.ravel()])
    assert np.array_equal(got, golden)


def test_portfolio_initializes_on_simplex():
    p = np.array([0.1, -0.2, 0.05])
    state = initialize(TaskSpec("portfolio", p=p, sigma=np.eye(3)))
    assert np.allclose(state.model.w, 1 / 3)


def test_terminate_returns_model():
    state = initialize(TaskSpec("ls", dim=2))
    assert terminate(state) is state.model


def _state(w, seen, steps=0):
    return AggState(Model.vector(np.asarray(w, dtype=float)), steps, seen)


def test_merge_weighted_average():
    m = merge(_state([1.0, 0.0], 1, 1), _state([4.0, 3.0], 2, 2))
    assert np.allclose(m.model.w, [3.0, 2.0])
    assert m.examples_seen == 3 and m.step_count == 3


def test_merge_with_empty_side():
    a = _state([1.0, 2.0], 5)
    assert np.array_equal(merge(a, _state([9.0, 9.0], 0)).model.w, [1.0, 2.0])
    assert np.array_equal(merge(_state([9.0, 9.0], 0), a).model.w, [1.0, 2.0])


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       st.integers(1, 100), st.integers(1, 100))
def test_merge_commutes(w1, w2, n1, n2):
    a, b = _state(w1, n1), _state(w2, n2)
    assert np.allclose(merge(a, b).model.w, merge(b, a).model.w)


def test_merge_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        merge(_state([1.0], 1), _state([1.0, 2.0], 1))


# ------------------------------------------------------------------ fold equivalence


def _fold(dataset, task, sched, state, order):
    for i in order:
        state = transition(state, dataset[int(i)], task, sched)
    return state


@pytest.mark.parametrize("task_name,reg", [
    ("ls", "none"), ("ls", "l2"), ("lr", "l1"), ("svm", "l2"), ("lr", "nonneg"),
])
def test_run_epoch_equals_fold_dense(task_name, reg, rng):
    ds = dense_classification(40, 5, seed=1)
    task = TaskSpec.for_dataset(task_name, ds, Regularizer(reg, 0.3))
    sched = StepSizeSchedule("divergent", 0.5)
    order = rng.permutation(len(ds))
    s0 = initialize(task)
    a = run_epoch(ds, s0, task, sched, order)
    b = _fold(ds, task, sched, s0, order)
    assert a.model == b.model
    assert a.step_count == b.step_count == len(ds)


@given(st.integers(0, 10_000))
def test_run_epoch_equals_fold_sparse(seed):
    rng = np.random.default_rng(seed)
    exs = []
    for _ in range(15):
        idx = np.sort(rng.choice(8, size=rng.integers(0, 4), replace=False))
        exs.append(Example.sparse(idx, rng.normal(size=idx.size), rng.choice([-1.0, 1.0])))
    ds = Dataset.from_examples(exs, dim=8)
    task = TaskSpec.for_dataset("lr", ds, Regularizer("l1", 0.1))
    sched = StepSizeSchedule("constant", 0.3)
    s0 = initialize(task)
    assert run_epoch(ds, s0, task, sched).model == _fold(ds, task, sched, s0, range(len(ds))).model
    # an iterable of examples takes the same path
    assert run_epoch(iter(exs), s0, task, sched).model == run_epoch(ds, s0, task, sched).model


def test_run_epoch_equals_fold_cells():
    ds, _ = rank1_matrix(6, 5, seed=2)
    task = TaskSpec.for_dataset("lmf", ds, Regularizer("l2", 0.05), rank=2)
    sched = StepSizeSchedule("constant", 0.05)
    s0 = initialize(task, seed=1)
    assert run_epoch(ds, s0, task, sched).model == _fold(ds, task, sched, s0, range(len(ds))).model


def test_run_epoch_empty_order_is_identity():
    ds = dense_regression(5, 2)
    task = TaskSpec.for_dataset("ls", ds)
    s0 = initialize(task)
    out = run_epoch(ds, s0, task, StepSizeSchedule(), np.array([], dtype=np.int64))
    assert out.model == s0.model and out.step_count == 0


def test_dimension_mismatch():
    task = TaskSpec("ls", dim=3)
    with pytest.raises(DimensionMismatch):
        transition(initialize(task), Example.dense([1.0, 2.0], 0.0), task, StepSizeSchedule())
    with pytest.raises(DimensionMismatch):
        transition(initialize(task), Example.sparse([5], [1.0], 0.0), task, StepSizeSchedule())
    with pytest.raises(DimensionMismatch):
        run_epoch(dense_regression(4, 2), initialize(task), task, StepSizeSchedule())


def test_nonfinite_step_raises():
    ds = Dataset.dense(np.full((20, 1), 10.0), np.ones(20))
    task = TaskSpec.for_dataset("ls", ds)
    with pytest.raises(NonFiniteError):
        train(ds, task, StepSizeSchedule("constant", 5.0), ConvergencePolicy("fixed", 50))


def _first_overflow(X, y, alpha):
    w = np.zeros(X.shape[1])
    with np.errstate(all="ignore"):
        for t in range(100000):
            i = t % len(y)
            w = w - alpha * (w @ X[i] - y[i]) * X[i]
            if not np.all(np.isfinite(w)):
                return t
    raise AssertionError("no overflow")


@pytest.mark.parametrize("kind", ["dense", "sparse"])
def test_nonfinite_reports_exact_step(kind):
    X = np.array([[3.0, 0.0], [2.0, 1.0], [0.0, 4.0]])
    y = np.array([1.0, -1.0, 2.0])
    ds = Dataset.dense(X, y)
    if kind == "sparse":
        ds = Dataset.from_examples(Example.sparse(np.flatnonzero(r), r[r != 0], v)
                                   for r, v in zip(X, y))
    task = TaskSpec.for_dataset("ls", ds)
    expect = _first_overflow(X, y, 0.5)
    order = np.tile(np.arange(3), 1000)
    with pytest.raises(NonFiniteError) as info:
        run_epoch(ds, initialize(task), task, StepSizeSchedule("constant", 0.5), order)
    assert info.value.step == expect


# ------------------------------------------------------------------ convergence


def test_converged_policies():
    assert converged([3.0, 2.0, 1.0], ConvergencePolicy("fixed", 3))
    assert not converged([3.0, 2.0], ConvergencePolicy("fixed", 3))
    rel = ConvergencePolicy("rel")
    assert not converged([1.0], rel)
    assert converged([1.0, 0.9995], rel)
    assert not converged([1.0, 0.99], rel)
    assert converged([0.0, 0.0], rel)
    g = ConvergencePolicy("gradnorm", grad_norm_tolerance=1e-3)
    assert converged([1.0], g, grad_norm=1e-4) and not converged([1.0], g, grad_norm=1e-2)
    with pytest.raises(ValueError):
        converged([1.0], g)


def test_train_stops_at_epoch_cap():
    ds = dense_regression(50, 3, seed=0)
    task = TaskSpec.for_dataset("ls", ds)
    res = train(ds, task, StepSizeSchedule("constant", 1e-4), ConvergencePolicy("rel", 3,
                                                                                rel_tolerance=1e-12))
    assert res.epochs_run == 3 and not res.converged
    times = [r.cum_seconds for r in res.records]
    assert times == sorted(times)


def test_train_deterministic():
    ds = dense_classification(200, 4, seed=3)
    task = TaskSpec.for_dataset("lr", ds, Regularizer("l2", 0.5))
    kw = dict(policy=ConvergencePolicy("fixed", 4),
              ordering=OrderingStrategy("shuffle-always", 11))
    a = train(ds, task, StepSizeSchedule("divergent", 1.0), **kw)
    b = train(ds, task, StepSizeSchedule("divergent", 1.0), **kw)
    assert a.model == b.model and a.objectives == b.objectives


def test_gradnorm_policy_stops():
    ds = dense_regression(60, 3, seed=5, noise=0.0)
    task = TaskSpec.for_dataset("ls", ds)
    res = train(ds, task, StepSizeSchedule("constant", 0.05),
                ConvergencePolicy("gradnorm", 500, grad_norm_tolerance=1e-6),
                OrderingStrategy("shuffle-once", 1))
    assert res.converged
    assert gradient_norm(ds, res.model, task) < 1e-6


def test_full_gradient_matches_finite_differences():
    ds = dense_classification(30, 4, seed=2)
    task = TaskSpec.for_dataset("lr", ds)
    w = np.random.default_rng(0).normal(size=4)
    g = full_gradient(ds, Model.vector(w), task)
    h = 1e-6
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        fd = (compute_loss(ds, Model.vector(w + e), task)
              - compute_loss(ds, Model.vector(w - e), task)) / (2 * h)
        assert g[j] == pytest.approx(fd, rel=1e-6)


# ------------------------------------------------------------------ convex oracles


def _gd_oracle(ds, task, lip):
    """Full-batch gradient descent on sum f + mu ||w||^2 until the gradient norm is 1e-10."""
    w = np.zeros(ds.dim)
    mu = task.mu if task.regularizer.kind == "l2" else 0.0
    step = 1.0 / (lip + 2 * mu)
    for _ in range(200_000):
        g = full_gradient(ds, Model.vector(w), task) + 2 * mu * w
        if np.linalg.norm(g) < 1e-10:
            break
        w = w - step * g
    return compute_loss(ds, Model.vector(w), task)


def _igd(ds, task, alpha0):
    return train(ds, task, StepSizeSchedule("divergent", alpha0),
                 ConvergencePolicy("rel", 300, rel_tolerance=1e-7),
                 OrderingStrategy("shuffle-once", 4))


def test_ls_reaches_gd_oracle():
    ds = dense_regression(300, 5, seed=1, noise=0.3)
    task = TaskSpec.for_dataset("ls", ds, Regularizer("l2", 3.0))
    fstar = _gd_oracle(ds, task, np.linalg.eigvalsh(ds.X.T @ ds.X).max())
    res = _igd(ds, task, 2.0)
    assert res.final_objective <= fstar * (1 + 1e-3)


def test_lr_reaches_gd_oracle():
    raw = dense_classification(400, 5, seed=2)
    ds = Dataset.dense(raw.X / np.sqrt(5), raw.y)
    task = TaskSpec.for_dataset("lr", ds, Regularizer("l2", 4.0))
    fstar = _gd_oracle(ds, task, 0.25 * np.linalg.eigvalsh(ds.X.T @ ds.X).max())
    res = _igd(ds, task, 1.0 / (2 * 4.0 / len(ds)))
    assert res.final_objective <= fstar * (1 + 1e-3)


def test_svm_reaches_lp_oracle():
    # L1-regularized hinge loss is a linear program: min sum xi + mu sum (u + v)
    raw = dense_classification(200, 4, seed=3)
    ds = Dataset.dense(raw.X / 2.0, raw.y)
    mu = 2.0
    N, d = ds.X.shape
    yX = ds.y[:, None] * ds.X
    c = np.concatenate([np.full(d, mu), np.full(d, mu), np.ones(N)])
    A = np.hstack([-yX, yX, -np.eye(N)])
    lp = so.linprog(c, A_ub=A, b_ub=-np.ones(N), bounds=[(0, None)] * (2 * d + N),
                    method="highs")
    fstar = lp.fun
    task = TaskSpec.for_dataset("svm", ds, Regularizer("l1", mu))
    best = min(_igd(ds, task, a0).final_objective for a0 in (10.0, 30.0, 100.0))
    assert best <= fstar * (1 + 1e-3)
    assert best >= fstar * (1 - 1e-9)
