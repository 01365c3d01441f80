"""``bismarck`` command line: train, predict, null, bench, gen.

Exit codes: 0 converged (or success), 1 usage/config/data error, 2 epoch cap reached.
"""
import argparse
import json
import os
import sys

import numpy as np

from .bench import SUITES, cmd_bench, cmd_null_aggregate, write_runlog
from .core import ConvergencePolicy, StepSizeSchedule, train
from .errors import BismarckError
from .ingest import (load_dataset, load_portfolio, portfolio_dataset, read_model_file,
                     save_model, write_dataset)
from .ordering import KINDS, OrderingStrategy, gen_catx
from .parallel import ExecutionScheme, default_workers
from .sampling import mrs_train, subsample_train
from .tasks import REGULARIZERS, TASKS, Regularizer, TaskSpec, predict_score

EXIT_OK, EXIT_ERROR, EXIT_CAP = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for the epoch cap here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _workers(value):
    env = os.environ.get("BISMARCK_THREADS")
    return max(1, int(env)) if env else (value or default_workers())


def _build_task(args, dataset):
    reg = Regularizer(args.reg, args.mu) if args.reg else None
    if args.task == "portfolio":
        p, sigma = load_portfolio(args.data)
        return TaskSpec("portfolio", p=p, sigma=sigma), portfolio_dataset()
    if args.task == "lmf" and reg is None:
        reg = Regularizer("l2", args.mu)
    elif reg is None:
        reg = Regularizer("l2", args.mu) if args.mu > 0 else Regularizer()
    return TaskSpec.for_dataset(args.task, dataset, reg, rank=args.rank), dataset


def _load(path, fmt, task):
    if task == "portfolio":
        return None, None
    classification = task in ("lr", "svm")
    return load_dataset(path, fmt, classification=classification)


def cmd_train(args):
    dataset, header = _load(args.data, args.format, args.task)
    task, dataset = _build_task(args, dataset)
    schedule = StepSizeSchedule(args.schedule, args.alpha0, args.rho)
    policy = ConvergencePolicy(args.policy, args.epochs, rel_tolerance=args.tol,
                               grad_norm_tolerance=args.tol)
    if args.mode == "full":
        scheme = ExecutionScheme(args.scheme, _workers(args.workers))
        result = train(dataset, task, schedule, policy, OrderingStrategy(args.order, args.seed),
                       scheme=scheme, seed=args.seed, physical_shuffle=args.physical_shuffle)
    else:
        if args.buffer is None:
            raise ValueError(f"--mode {args.mode} needs --buffer")
        fn = subsample_train if args.mode == "subsample" else mrs_train
        result = fn(dataset, args.buffer, task, schedule, policy, seed=args.seed)
    result.config.update({"data": args.data, "mode": args.mode, "alpha0": args.alpha0,
                          "rho": args.rho, "tol": args.tol, "rank": args.rank,
                          "mu": args.mu, "order": args.order, "seed": args.seed})
    if header is not None:
        result.config["data_checksum"] = header.checksum
    if args.model_out:
        save_model(result.model, {"task": args.task, "seed": args.seed,
                                  "schedule": schedule.describe(),
                                  "epochs": result.epochs_run}, args.model_out)
    log = args.log or (os.path.splitext(args.model_out)[0] + ".log.csv" if args.model_out
                       else None)
    if log:
        write_runlog(result, log)
    print(f"epochs={result.epochs_run} objective={result.final_objective!r} "
          f"converged={str(result.converged).lower()}")
    return EXIT_OK if result.converged else EXIT_CAP


def cmd_predict(args):
    mf = read_model_file(args.model)
    task_name = args.task or mf.task
    if task_name == "portfolio":
        raise ValueError("portfolio models have no prediction semantics")
    dataset, _ = load_dataset(args.data, args.format)
    if mf.model.kind == "factors":
        m, n, r = mf.model.shape
        task = TaskSpec("lmf", m=m, n=n, rank=r)
    else:
        task = TaskSpec(task_name, dim=mf.model.w.size)
    scores = np.array([predict_score(task, mf.model, ex) for ex in dataset])
    if task.is_classification:
        preds = np.where(scores >= 0.0, 1.0, -1.0)
    else:
        preds = scores
    out = open(args.out, "w") if args.out else None
    try:
        if out:
            for p in preds:
                out.write(f"{p!r}\n")
    finally:
        if out:
            out.close()
    if task.is_classification:
        print(f"accuracy={float(np.mean(preds == dataset.y))!r}")
    else:
        print(f"rmse={float(np.sqrt(np.mean((preds - dataset.y) ** 2)))!r}")
    return EXIT_OK


def cmd_null(args):
    dataset, _ = load_dataset(args.data, args.format)
    tasks = args.tasks.split(",") if args.tasks else None
    rows = cmd_null_aggregate(dataset, tasks=tasks, mu=args.mu, rank=args.rank, runs=args.runs)
    print("task,null_seconds,task_seconds,overhead")
    for r in rows:
        print(f"{r['task']},{r['null_seconds']:.6f},{r['task_seconds']:.6f},{r['overhead']:.4f}")
    return EXIT_OK


def cmd_bench_main(args):
    summary, _ = cmd_bench(args.suite, args.out, plots=not args.no_plots)
    for row in summary.rows:
        print(",".join(str(v) for v in row))
    return EXIT_OK


def cmd_gen(args):
    from . import synth
    if args.kind == "catx":
        ds = gen_catx(args.n)
    elif args.kind == "sparse-lr":
        ds = synth.sparse_classification(args.n, args.dim, args.nnz, seed=args.seed)
    elif args.kind == "dense-lr":
        ds = synth.dense_classification(args.n, args.dim, seed=args.seed)
    elif args.kind == "dense-ls":
        ds = synth.dense_regression(args.n, args.dim, seed=args.seed)
    else:
        ds, _ = synth.rank1_matrix(args.n, args.dim, seed=args.seed)
    write_dataset(ds, args.out, declare_dims=True)
    print(f"wrote {len(ds)} examples to {args.out}")
    return EXIT_OK


def build_parser():
    ap = _Parser(prog="bismarck", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--task", required=True, choices=TASKS)
    t.add_argument("--data", required=True)
    t.add_argument("--format", choices=("dense", "sparse", "triples"))
    t.add_argument("--model-out")
    t.add_argument("--log", help="RunLog CSV path (default: next to --model-out)")
    t.add_argument("--order", default="clustered", choices=KINDS)
    t.add_argument("--physical-shuffle", action="store_true")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--scheme", default="seq")
    t.add_argument("--workers", type=int, default=None)
    t.add_argument("--mode", default="full", choices=("full", "subsample", "mrs"))
    t.add_argument("--buffer", type=int)
    t.add_argument("--schedule", default="divergent",
                   choices=("constant", "geometric", "divergent"))
    t.add_argument("--alpha0", type=float, default=0.1)
    t.add_argument("--rho", type=float, default=0.5)
    t.add_argument("--reg", choices=REGULARIZERS)
    t.add_argument("--mu", type=float, default=0.0)
    t.add_argument("--rank", type=int, default=5)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--policy", default="rel", choices=("fixed", "rel", "gradnorm"))
    t.add_argument("--tol", type=float, default=1e-3)
    t.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="apply a model to a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("dense", "sparse", "triples"))
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_predict)

    n = sub.add_parser("null", help="NULL-aggregate overhead report")
    n.add_argument("--data", required=True)
    n.add_argument("--format", choices=("dense", "sparse", "triples"))
    n.add_argument("--tasks")
    n.add_argument("--mu", type=float, default=0.0)
    n.add_argument("--rank", type=int, default=5)
    n.add_argument("--runs", type=int, default=3)
    n.set_defaults(fn=cmd_null)

    b = sub.add_parser("bench", help="run a benchmark suite")
    b.add_argument("suite", choices=SUITES)
    b.add_argument("--out", default="bench_out")
    b.add_argument("--no-plots", action="store_true")
    b.set_defaults(fn=cmd_bench_main)

    g = sub.add_parser("gen", help="write a synthetic dataset")
    g.add_argument("kind", choices=("catx", "sparse-lr", "dense-lr", "dense-ls", "rank1"))
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=500)
    g.add_argument("--dim", type=int, default=20)
    g.add_argument("--nnz", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gen)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already reported
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    if not getattr(args, "fn", None):
        ap.print_usage(sys.stderr)
        return EXIT_ERROR
    try:
        return args.fn(args)
    except (BismarckError, ValueError, OSError) as exc:
        print(f"bismarck: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
