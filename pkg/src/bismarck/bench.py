"""Benchmark harness: RunLog CSVs, warm-cache timing, the NULL aggregate and the suites.

Every suite writes one RunLog CSV per run, a ``summary.csv`` in long format
(``suite,experiment,variant,metric,value``) and a ``config.json`` echo of the
parameters and seeds, all into one output directory.
"""
import csv
import json
import os
import time

import numpy as np
from numba import njit

from . import _kernels as K
from .core import ConvergencePolicy, StepSizeSchedule, initialize, train
from .data import Dataset
from .ordering import EpochOrder, OrderingStrategy, gen_catx
from .parallel import EpochRunner, ExecutionScheme
from .sampling import mrs_train, subsample_train
from .synth import dense_classification, sparse_classification
from .tasks import Regularizer, TaskSpec

RUNLOG_HEADER = ("epoch", "objective", "cum_seconds", "epoch_seconds", "shuffle_seconds")
SUMMARY_HEADER = ("suite", "experiment", "variant", "metric", "value")
SUITES = ("catx", "ordering", "parallel", "mrs", "overhead")


# ------------------------------------------------------------------ logs


def write_runlog(result, path):
    """Per-epoch CSV plus a ``<name>.json`` config echo beside it."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(RUNLOG_HEADER)
        for r in result.records:
            out.writerow([r.epoch, repr(r.objective), repr(r.cum_seconds),
                          repr(r.epoch_seconds), repr(r.shuffle_seconds)])
    with open(os.path.splitext(path)[0] + ".json", "w") as fh:
        json.dump({"config": result.config, "converged": result.converged}, fh, indent=2,
                  default=str)
    return path


def read_runlog(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in RUNLOG_HEADER}


class Summary:
    """Accumulates long-format summary rows for one suite."""

    def __init__(self, suite):
        self.suite = suite
        self.rows = []

    def add(self, experiment, variant, metric, value):
        self.rows.append((self.suite, experiment, variant, metric, value))

    def get(self, experiment, variant, metric):
        for row in self.rows:
            if row[1:4] == (experiment, variant, metric):
                return row[4]
        raise KeyError((experiment, variant, metric))

    def write(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(SUMMARY_HEADER)
            out.writerows(self.rows)
        return path


# ------------------------------------------------------------------ timing


def warm_mean(fn, runs=3, warmup=1):
    """Mean wall time of ``runs`` calls of ``fn`` after ``warmup`` discarded calls."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(runs):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return float(np.mean(times))


def warm_mean_paired(fa, fb, runs=3, warmup=1):
    """``warm_mean`` of two callables with their timed calls interleaved.

    Alternating keeps slow drift in machine load from landing on one side only.
    """
    for _ in range(warmup):
        fa()
        fb()
    ta, tb = [], []
    for _ in range(runs):
        for fn, times in ((fa, ta), (fb, tb)):
            t = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t)
    return float(np.mean(ta)), float(np.mean(tb))


def log_grid(lo, hi, per_decade=1):
    """Logarithmic grid from ``lo`` to ``hi`` inclusive."""
    n = int(round(np.log10(hi / lo) * per_decade)) + 1
    return [float(v) for v in np.logspace(np.log10(lo), np.log10(hi), n)]


def grid_search(score, grid):
    """Return ``(best, scores)``: the grid value with the lowest score (first one on ties)."""
    scores = [float(score(v)) for v in grid]
    return grid[int(np.argmin(scores))], scores


# ------------------------------------------------------------------ NULL aggregate


def null_epoch(data, order, signal=None):
    """Stream ``data[order]`` through a no-op transition; returns ``(n, checksum)``."""
    signal = np.ones(1, dtype=np.int64) if signal is None else signal
    if data.kind == "dense":
        return K.null_dense(data.X, data.y, order, signal)
    if data.kind == "sparse":
        return K.null_sparse(data.indptr, data.indices, data.values, data.y, order, signal)
    return K.null_cells(data.rows, data.cols, data.y, order, signal)


def _default_tasks(dataset):
    if dataset.kind == "cells":
        return ("lmf",)
    if np.all(np.abs(dataset.y) == 1.0):
        return ("ls", "lr", "svm")
    return ("ls",)


def cmd_null_aggregate(dataset, tasks=None, ordering=None, mu=0.0, rank=5, runs=3,
                       schedule=None):
    """Per-epoch time of the NULL aggregate and of each task over the same epoch machinery.

    Both go through ``EpochOrder`` and one epoch from a fresh model; each
    point is the warm-cache mean, with each task's runs interleaved with
    NULL runs.  Returns one dict per task with
    ``null_seconds``, ``task_seconds`` and ``overhead = task/null - 1``.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    ordering = ordering or OrderingStrategy("shuffle-once", 0)
    schedule = schedule or StepSizeSchedule("divergent", 0.1)
    order_for = EpochOrder(dataset, ordering)

    def null_run():
        data, order = order_for(0)
        null_epoch(data, order)

    rows = []
    for name in tasks or _default_tasks(dataset):
        reg = Regularizer("l2", mu) if mu > 0 else Regularizer()
        task = TaskSpec.for_dataset(name, dataset, reg, rank=rank)
        runner = EpochRunner(ExecutionScheme("seq"), task, schedule)

        def task_run():
            data, order = order_for(0)
            runner(data, order, initialize(task, seed=0))

        null_s, task_s = warm_mean_paired(null_run, task_run, runs)
        rows.append({"task": name, "null_seconds": null_s, "task_seconds": task_s,
                     "overhead": task_s / null_s - 1.0})
    return rows


# ------------------------------------------------------------------ CA-TX


@njit(cache=True)
def _ls1d_epoch(x, y, order, w, k, skind, alpha0, rho):
    # the dense LS kernel's arithmetic for d = 1, also tracking max w^2 over the epoch
    peak = 0.0
    for t in range(order.size):
        i = order[t]
        a = K.step_size(skind, alpha0, rho, k)
        wx = 0.0
        wx += w * x[i]
        c = a * (wx - y[i])
        w = w - c * x[i]
        if w * w > peak:
            peak = w * w
        k += 1
    return w, k, peak


def catx_epochs(dataset, ordering, schedule, threshold=1e-3, max_epochs=1000, w0=0.0):
    """First epoch (1-based) in which w^2 stays below ``threshold`` at every step.

    Returns ``(epochs or None, per-epoch objectives, final w)``.
    """
    order_for = EpochOrder(dataset, ordering)
    w, k = w0, 0
    objectives = []
    for epoch in range(max_epochs):
        data, order = order_for(epoch)
        w, k, peak = _ls1d_epoch(np.ascontiguousarray(data.X[:, 0]), data.y, order, w, k,
                                 schedule.code, schedule.alpha0, schedule.rho)
        objectives.append(float(0.5 * np.sum((w - dataset.y) ** 2)))
        if peak < threshold:
            return epoch + 1, objectives, w
    return None, objectives, w


CATX_GRID = (0.5, 0.7, 1.0, 1.5, 1.9)


def catx_experiment(n=500, seed=0, grid=CATX_GRID, max_epochs=1000):
    """Grid-search alpha0 for the shuffled order, then count epochs for both orders."""
    ds = gen_catx(n)
    rand = OrderingStrategy("shuffle-once", seed)
    clus = OrderingStrategy("clustered", seed)

    def score(a0):
        e, _, _ = catx_epochs(ds, rand, StepSizeSchedule("divergent", a0), max_epochs=max_epochs)
        return np.inf if e is None else e

    alpha0, scores = grid_search(score, list(grid))
    sched = StepSizeSchedule("divergent", alpha0)
    e_rand, obj_rand, w_rand = catx_epochs(ds, rand, sched, max_epochs=max_epochs)
    e_clus, obj_clus, w_clus = catx_epochs(ds, clus, sched, max_epochs=max_epochs)
    return {"alpha0": alpha0, "grid": list(grid), "grid_scores": scores,
            "random": {"epochs": e_rand, "objectives": obj_rand, "w": w_rand},
            "clustered": {"epochs": e_clus, "objectives": obj_clus, "w": w_clus}}


# ------------------------------------------------------------------ problems


def ordering_problem(N=50_000, d=2000, nnz=20, seed=0, mu_per_tuple=1e-4):
    """Clustered sparse LR with an L2 penalty scaled to the data size."""
    ds = sparse_classification(N, d, nnz, seed=seed, noise=0.5, clustered=True)
    return ds, TaskSpec.for_dataset("lr", ds, Regularizer("l2", mu_per_tuple * N))


def parallel_problem(N=100_000, d=50, seed=1, mu_per_tuple=1e-3):
    """Dense LR with unit-scale rows."""
    raw = dense_classification(N, d, seed=seed)
    ds = Dataset.dense(raw.X / np.sqrt(d), raw.y)
    return ds, TaskSpec.for_dataset("lr", ds, Regularizer("l2", mu_per_tuple * N))


def mrs_problem(N=100_000, d=4000, nnz=20, seed=0, mu_per_tuple=1e-5):
    ds = sparse_classification(N, d, nnz, seed=seed, noise=0.1, clustered=True)
    return ds, TaskSpec.for_dataset("lr", ds, Regularizer("l2", mu_per_tuple * N))


ORDERING_GRID = (500.0, 1000.0, 2000.0, 4000.0)


def ordering_experiment(dataset, task, grid=ORDERING_GRID, seed=7, max_epochs=100,
                        physical=True):
    """Shuffle-once vs shuffle-always under the default 0.1% relative-drop policy.

    alpha0 is the grid value whose shuffle-always run converges to the lowest objective.
    """
    policy = ConvergencePolicy("rel", max_epochs)

    def run(kind, a0):
        return train(dataset, task, StepSizeSchedule("divergent", a0), policy,
                     OrderingStrategy(kind, seed), physical_shuffle=physical)

    results = {}

    def score(a0):
        results[a0] = run("shuffle-always", a0)
        return results[a0].final_objective

    alpha0, scores = grid_search(score, list(grid))
    return {"alpha0": alpha0, "grid": list(grid), "grid_scores": scores,
            "shuffle-always": results[alpha0], "shuffle-once": run("shuffle-once", alpha0)}


def epoch_time(dataset, task, schedule, scheme, order, runs=3):
    """Warm-cache mean of one epoch's gradient work (ordering excluded)."""
    runner = EpochRunner(scheme, task, schedule)
    return warm_mean(lambda: runner(dataset, order, initialize(task, seed=0)), runs)


SCHEMES = ("avg", "lock", "aig", "nolock")


def parallel_experiment(dataset, task, alpha0=300.0, workers=4, seed=3, max_epochs=30,
                        worker_ladder=(4,), runs=3):
    """Per-epoch speed-ups over sequential and each scheme's converged objective.

    The oracle is a sequential run with a tight relative tolerance.
    """
    sched = StepSizeSchedule("divergent", alpha0)
    ordering = OrderingStrategy("shuffle-once", seed)
    order = EpochOrder(dataset, ordering)(0)[1]
    seq_t = epoch_time(dataset, task, sched, ExecutionScheme("seq"), order, runs)
    speedups = {}
    for p in worker_ladder:
        for kind in SCHEMES:
            t = epoch_time(dataset, task, sched, ExecutionScheme(kind, p), order, runs)
            speedups[(kind, p)] = seq_t / t
    oracle = train(dataset, task, sched, ConvergencePolicy("rel", max_epochs, rel_tolerance=1e-6),
                   ordering)
    runs_out = {"seq": train(dataset, task, sched, ConvergencePolicy("rel", max_epochs), ordering)}
    for kind in SCHEMES:
        runs_out[kind] = train(dataset, task, sched, ConvergencePolicy("rel", max_epochs),
                               ordering, scheme=ExecutionScheme(kind, workers))
    return {"alpha0": alpha0, "seq_seconds": seq_t, "speedups": speedups,
            "oracle": oracle, "runs": runs_out}


def time_to_factor(result, target, interpolate=True):
    """Cumulative seconds until the objective first reaches ``target`` (inf if never).

    With ``interpolate`` the crossing is placed linearly between the two
    epoch records that bracket it, so the estimate is not quantized to epochs.
    """
    prev = None
    for r in result.records:
        if r.objective <= target:
            if not interpolate or prev is None or not np.isfinite(prev.objective):
                return r.cum_seconds
            frac = (prev.objective - target) / (prev.objective - r.objective)
            return prev.cum_seconds + frac * (r.cum_seconds - prev.cum_seconds)
        prev = r
    return np.inf


MRS_ALPHA0 = 1e4


def mrs_experiment(dataset, task, optimum, alpha0=MRS_ALPHA0, seeds=(0, 1, 2, 3, 4),
                   budget=1.0, ladder_budget=0.5, fractions=(20, 10, 5), main_fraction=10):
    """Equal-budget MRS vs subsample at B = N/main_fraction, plus the buffer ladder.

    The ladder reports, per mode and B, the median over ``seeds`` of the
    time to reach twice the optimal objective.
    """
    N = len(dataset)
    sched = StepSizeSchedule("divergent", alpha0)
    policy = ConvergencePolicy("fixed", 10**6)
    B = N // main_fraction
    main = {"subsample": [], "mrs": []}
    for s in seeds:
        main["subsample"].append(subsample_train(dataset, B, task, sched, policy, seed=s,
                                                 time_budget=budget))
        main["mrs"].append(mrs_train(dataset, B, task, sched, policy, seed=s,
                                     time_budget=budget))
    ladder = {}
    for f in fractions:
        b = N // f
        for mode, fn in (("subsample", subsample_train), ("mrs", mrs_train)):
            times = []
            for s in seeds:
                res = fn(dataset, b, task, sched, policy, seed=s, time_budget=ladder_budget)
                times.append(time_to_factor(res, 2.0 * optimum))
            ladder[(mode, b)] = float(np.median(times))
    clustered = train(dataset, task, sched, ConvergencePolicy("fixed", 10**6),
                      OrderingStrategy("clustered"), time_budget=budget)
    return {"alpha0": alpha0, "B": B, "main": main, "ladder": ladder, "clustered": clustered,
            "optimum": optimum, "buffers": [N // f for f in fractions]}


def lbfgs_optimum(dataset, task):
    """Reference optimum of an L2-regularized LR/LS objective (scipy L-BFGS-B)."""
    import scipy.optimize as so
    import scipy.sparse as sp

    if dataset.kind == "sparse":
        A = sp.csr_matrix((dataset.values, dataset.indices, dataset.indptr),
                          shape=(len(dataset), dataset.dim))
    else:
        A = dataset.X
    y = dataset.y
    mu = task.mu if task.regularizer.kind == "l2" else 0.0

    def f(w):
        z = A @ w
        if task.task == "lr":
            m = -y * z
            loss = np.logaddexp(0.0, m).sum()
            g = A.T @ (-y / (1.0 + np.exp(-m)))
        else:
            r = z - y
            loss = 0.5 * r @ r
            g = A.T @ r
        return loss + mu * w @ w, g + 2.0 * mu * w

    res = so.minimize(f, np.zeros(dataset.dim), jac=True, method="L-BFGS-B",
                      options={"maxiter": 10000, "gtol": 1e-10, "ftol": 1e-15})
    return float(res.fun), res.x


# ------------------------------------------------------------------ suites


def _runlog(outdir, name, result, logs):
    logs.append(write_runlog(result, os.path.join(outdir, name + ".csv")))


def suite_catx(outdir, summary, config, n=500, seed=0, **kw):
    out = catx_experiment(n, seed, **kw)
    config["catx"] = {"n": n, "seed": seed, "grid": out["grid"], "alpha0": out["alpha0"]}
    for kind in ("random", "clustered"):
        path = os.path.join(outdir, f"catx_{kind}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RUNLOG_HEADER)
            for e, obj in enumerate(out[kind]["objectives"]):
                w.writerow([e, repr(obj), 0.0, 0.0, 0.0])
        e = out[kind]["epochs"]
        summary.add("catx", kind, "epochs", -1 if e is None else e)
    summary.add("catx", "grid", "alpha0", out["alpha0"])
    return out


def suite_ordering(outdir, summary, config, N=50_000, seed=0, **kw):
    ds, task = ordering_problem(N, seed=seed)
    out = ordering_experiment(ds, task, **kw)
    config["ordering"] = {"N": N, "d": ds.dim, "seed": seed, "grid": out["grid"],
                          "alpha0": out["alpha0"], "mu": task.mu, "physical": True}
    logs = []
    for kind in ("shuffle-always", "shuffle-once"):
        res = out[kind]
        _runlog(outdir, f"ordering_{kind}", res, logs)
        summary.add("ordering", kind, "epochs", res.epochs_run)
        summary.add("ordering", kind, "seconds", res.records[-1].cum_seconds)
        summary.add("ordering", kind, "objective", res.final_objective)
        summary.add("ordering", kind, "mean_shuffle_seconds",
                    float(np.mean([r.shuffle_seconds for r in res.records])))
    return out


def suite_parallel(outdir, summary, config, N=100_000, seed=1, worker_ladder=(1, 2, 4, 8),
                   **kw):
    ds, task = parallel_problem(N, seed=seed)
    out = parallel_experiment(ds, task, worker_ladder=worker_ladder, **kw)
    config["parallel"] = {"N": N, "d": ds.dim, "seed": seed, "alpha0": out["alpha0"],
                          "workers": list(worker_ladder), "cpu_count": os.cpu_count()}
    summary.add("parallel", "seq", "epoch_seconds", out["seq_seconds"])
    for (kind, p), s in out["speedups"].items():
        summary.add("parallel", f"{kind}-{p}", "speedup", s)
    logs = []
    _runlog(outdir, "parallel_oracle", out["oracle"], logs)
    for kind, res in out["runs"].items():
        _runlog(outdir, f"parallel_{kind}", res, logs)
        summary.add("parallel", kind, "objective", res.final_objective)
        summary.add("parallel", kind, "epochs", res.epochs_run)
    summary.add("parallel", "oracle", "objective", out["oracle"].final_objective)
    return out


def suite_mrs(outdir, summary, config, N=100_000, seed=0, **kw):
    ds, task = mrs_problem(N, seed=seed)
    fstar, _ = lbfgs_optimum(ds, task)
    out = mrs_experiment(ds, task, fstar, **kw)
    config["mrs"] = {"N": N, "d": ds.dim, "seed": seed, "alpha0": out["alpha0"],
                     "buffers": out["buffers"], "optimum": fstar}
    logs = []
    for mode, results in out["main"].items():
        for i, res in enumerate(results):
            _runlog(outdir, f"mrs_{mode}_seed{i}", res, logs)
        summary.add("mrs", mode, "mean_final_objective",
                    float(np.mean([r.final_objective for r in results])))
    _runlog(outdir, "mrs_clustered", out["clustered"], logs)
    summary.add("mrs", "clustered", "final_objective", out["clustered"].final_objective)
    for (mode, b), t in out["ladder"].items():
        summary.add("mrs", f"{mode}-B{b}", "seconds_to_2x", t)
    summary.add("mrs", "oracle", "objective", fstar)
    return out


def suite_overhead(outdir, summary, config, N=100_000, seed=0, runs=3):
    sparse = sparse_classification(N, 2000, 20, seed=seed)
    dense = dense_classification(N, 50, seed=seed)
    config["overhead"] = {"N": N, "seed": seed, "datasets": ["sparse d=2000", "dense d=50"]}
    out = {}
    for name, ds in (("sparse", sparse), ("dense", dense)):
        rows = cmd_null_aggregate(ds, mu=1.0, runs=runs)
        out[name] = rows
        for r in rows:
            summary.add("overhead", f"{name}-{r['task']}", "null_seconds", r["null_seconds"])
            summary.add("overhead", f"{name}-{r['task']}", "task_seconds", r["task_seconds"])
            summary.add("overhead", f"{name}-{r['task']}", "overhead", r["overhead"])
    return out


_SUITE_FNS = {"catx": suite_catx, "ordering": suite_ordering, "parallel": suite_parallel,
              "mrs": suite_mrs, "overhead": suite_overhead}


def cmd_bench(suite, outdir, plots=True, **kw):
    """Run one suite; returns ``(summary, raw results)`` and writes everything to ``outdir``.

    Keyword arguments override the suite's problem size and experiment settings.
    """
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")
    os.makedirs(outdir, exist_ok=True)
    summary = Summary(suite)
    config = {"suite": suite}
    out = _SUITE_FNS[suite](outdir, summary, config, **kw)
    summary.write(os.path.join(outdir, "summary.csv"))
    with open(os.path.join(outdir, "config.json"), "w") as fh:
        json.dump(config, fh, indent=2, default=str)
    if plots:
        from .plotting import plot_suite
        plot_suite(suite, outdir, summary)
    return summary, out
