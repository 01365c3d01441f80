"""Desk-scale synthetic datasets for tests and benchmarks."""
import numpy as np

from .data import Dataset


def _cluster_by_label(X_or_rows, y):
    order = np.argsort(-y, kind="stable")  # +1 block first, then -1
    return order


def sparse_classification(N, d, nnz, seed=0, noise=0.5, clustered=True, zipf=None,
                          normalize=True):
    """Sparse data labelled by a noisy linear rule; rows have unit norm if ``normalize``.

    ``zipf`` > 1 draws feature indices from a power law, so a few features are
    common and most are rare (text-like); otherwise indices are uniform.
    """
    rng = np.random.default_rng(seed)
    if zipf:
        weights = 1.0 / np.arange(1, d + 1) ** (zipf - 1.0)
        weights /= weights.sum()
    else:
        weights = None
    w_true = rng.normal(size=d)
    k = np.maximum(1, rng.poisson(nnz, size=N))
    owner = np.repeat(np.arange(N), k)
    feat = rng.choice(d, size=owner.size, p=weights)
    key = np.unique(owner * d + feat)  # sorted by row, then feature; drops repeats
    owner, feat = key // d, key % d
    lens = np.bincount(owner, minlength=N)
    score = np.bincount(owner, weights=w_true[feat], minlength=N) / np.sqrt(nnz)
    y = np.where(score + noise * rng.normal(size=N) >= 0, 1.0, -1.0)
    indptr = np.concatenate([[0], np.cumsum(lens)])
    values = 1.0 / np.sqrt(np.repeat(lens, lens)) if normalize else np.ones(feat.size)
    ds = Dataset.sparse(indptr, feat, values, y, dim=d)
    if clustered:
        ds = ds.take(_cluster_by_label(None, y))
    return ds


def dense_classification(N, d, seed=0, noise=1.0, clustered=False):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(N, d))
    w_true = rng.normal(size=d) / np.sqrt(d)
    y = np.where(X @ w_true + noise * rng.normal(size=N) * 0.5 >= 0, 1.0, -1.0)
    if clustered:
        order = _cluster_by_label(X, y)
        X, y = X[order], y[order]
    return Dataset.dense(X, y)


def dense_regression(N, d, seed=0, noise=0.1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(N, d))
    w_true = rng.normal(size=d)
    return Dataset.dense(X, X @ w_true + noise * rng.normal(size=N))


def rank1_matrix(m, n, density=0.5, seed=0):
    """Observed cells of M = u v^T; every row and column keeps at least one cell."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.5, 1.5, size=m)
    v = rng.uniform(0.5, 1.5, size=n)
    mask = rng.random((m, n)) < density
    mask[np.arange(m), rng.integers(0, n, size=m)] = True
    mask[rng.integers(0, m, size=n), np.arange(n)] = True
    rows, cols = np.nonzero(mask)
    return Dataset.cells(rows, cols, u[rows] * v[cols], shape=(m, n)), (u, v)


def portfolio_problem(d, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d))
    sigma = A @ A.T / d
    sigma = 0.5 * (sigma + sigma.T)
    p = rng.normal(size=d) * 0.1
    return p, sigma
