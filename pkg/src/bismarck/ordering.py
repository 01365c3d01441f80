"""Data-ordering strategies and the CA-TX pathological-ordering example.

Permutations come from numpy's PCG64 generator (``Generator.permutation`` is a
Fisher-Yates shuffle).  Shuffle-always derives the epoch's seed by mixing
``(seed, epoch)`` through ``SeedSequence`` so every epoch is replayable.
"""
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .data import Dataset

KINDS = ("clustered", "shuffle-once", "shuffle-always")


@dataclass(frozen=True)
class OrderingStrategy:
    kind: str = "clustered"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown ordering {self.kind!r}; expected one of {KINDS}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def _generator(*entropy):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def permute(strategy, epoch, N):
    """Index permutation used for ``epoch`` over ``N`` stored examples."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if strategy.kind == "clustered":
        return np.arange(N, dtype=np.int64)
    if strategy.kind == "shuffle-once":
        rng = _generator(strategy.seed)
    else:
        rng = _generator(strategy.seed, epoch)
    return rng.permutation(N).astype(np.int64)


def is_permutation(sigma, N):
    sigma = np.asarray(sigma)
    return sigma.size == N and np.array_equal(np.sort(sigma), np.arange(N))


def physical_rewrite(dataset, order, spool_dir=None):
    """Write the examples in ``order`` to a spool file and read them back.

    Stands in for an ``ORDER BY RANDOM()`` table rewrite, so the I/O cost of
    reshuffling is paid instead of just re-indexing.
    """
    shuffled = dataset.take(order)
    fd, path = tempfile.mkstemp(suffix=".npz", dir=spool_dir)
    os.close(fd)
    try:
        names = [f"a{i}" for i in range(len(shuffled.arrays()))]
        np.savez(path, **dict(zip(names, shuffled.arrays())))
        with np.load(path) as z:
            arrays = [z[n] for n in names]
    finally:
        os.unlink(path)
    if dataset.kind == "dense":
        return Dataset.dense(arrays[0], arrays[1])
    if dataset.kind == "sparse":
        return Dataset.sparse(*arrays, dim=dataset.dim)
    return Dataset.cells(*arrays, shape=dataset.shape)


class EpochOrder:
    """Produces ``(data, order)`` for each epoch under a strategy.

    With ``physical=True`` a shuffled epoch is physically rewritten and then
    scanned in storage order; shuffle-once rewrites only the first time.
    """

    def __init__(self, dataset, strategy, physical=False, spool_dir=None):
        self.dataset = dataset
        self.strategy = strategy
        self.physical = physical
        self.spool_dir = spool_dir
        self._once = None
        self._identity = np.arange(len(dataset), dtype=np.int64)

    def __call__(self, epoch):
        kind = self.strategy.kind
        if kind == "clustered":
            return self.dataset, self._identity
        if kind == "shuffle-once" and self._once is not None:
            return self._once
        sigma = permute(self.strategy, epoch, len(self.dataset))
        if self.physical:
            out = (physical_rewrite(self.dataset, sigma, self.spool_dir), self._identity)
        else:
            out = (self.dataset, sigma)
        if kind == "shuffle-once":
            self._once = out
        return out


def gen_catx(n):
    """2n one-dimensional LS examples, x = 1, labels +1 then -1 (clustered by class)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    y = np.concatenate([np.ones(n), -np.ones(n)])
    return Dataset.dense(np.ones((2 * n, 1)), y)


def catx_closed_form(w0, alpha, labels, k):
    """Iterate k of w <- w - alpha (w - y) over ``labels`` taken in order, unrolled."""
    labels = np.asarray(labels, dtype=np.float64)
    if not 0 <= k <= labels.size:
        raise ValueError("k out of range")
    q = 1.0 - alpha
    powers = q ** np.arange(k - 1, -1, -1, dtype=np.float64)
    return q**k * w0 + alpha * float(powers @ labels[:k])
