"""Figures for benchmark output, rendered to PNG next to the CSVs."""
import glob
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import read_runlog  # noqa: E402


def plot_runlogs(paths, out, x="epoch", labels=None, title=None, logy=True):
    """Objective against ``x`` (a RunLog column) for several logs on one axis."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for i, path in enumerate(paths):
        log = read_runlog(path)
        label = labels[i] if labels else os.path.splitext(os.path.basename(path))[0]
        ax.plot(log[x], log["objective"], marker="." if len(log[x]) < 60 else None, label=label)
    ax.set_xlabel(x.replace("_", " "))
    ax.set_ylabel("objective")
    if logy:
        ax.set_yscale("log")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_bars(names, values, out, ylabel, title=None, reference=None):
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(names)), 3.5))
    ax.bar(range(len(names)), values)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    if reference is not None:
        ax.axhline(reference, color="k", lw=0.8, ls="--")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def _metric(summary, metric):
    rows = [r for r in summary.rows if r[3] == metric]
    return [r[2] for r in rows], [float(r[4]) for r in rows]


def plot_suite(suite, outdir, summary):
    """Render the suite's standard figures; returns the written paths."""
    j = lambda *p: os.path.join(outdir, *p)  # noqa: E731
    out = []
    if suite == "catx":
        out.append(plot_runlogs([j("catx_random.csv"), j("catx_clustered.csv")],
                                j("catx.png"), title="CA-TX"))
    elif suite == "ordering":
        logs = [j("ordering_shuffle-always.csv"), j("ordering_shuffle-once.csv")]
        out.append(plot_runlogs(logs, j("ordering_epochs.png")))
        out.append(plot_runlogs(logs, j("ordering_time.png"), x="cum_seconds"))
    elif suite == "parallel":
        names, vals = _metric(summary, "speedup")
        out.append(plot_bars(names, vals, j("parallel_speedup.png"), "speed-up", reference=1.0))
        logs = sorted(glob.glob(j("parallel_*.csv")))
        out.append(plot_runlogs(logs, j("parallel_objective.png")))
    elif suite == "mrs":
        logs = [j("mrs_subsample_seed0.csv"), j("mrs_mrs_seed0.csv"), j("mrs_clustered.csv")]
        out.append(plot_runlogs(logs, j("mrs_time.png"), x="cum_seconds"))
        names, vals = _metric(summary, "seconds_to_2x")
        out.append(plot_bars(names, vals, j("mrs_ladder.png"), "seconds to 2x optimal"))
    elif suite == "overhead":
        names, vals = _metric(summary, "overhead")
        out.append(plot_bars(names, vals, j("overhead.png"), "overhead vs NULL"))
    return out
