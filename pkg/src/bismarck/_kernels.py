"""Compiled inner loops.

Every per-example update in the package goes through these functions, so the
single-example ``transition`` path, the sequential epoch path and the threaded
paths share one arithmetic definition and stay bit-identical where the
contract requires it.

All kernels are ``nogil`` so worker threads run them concurrently.
"""
import math

import numpy as np
from numba import njit

from ._atomics import cas_f64, load_i64, spin_acquire, spin_release

# task codes
LS = 0
LR = 1
SVM = 2
LMF = 3
PORTFOLIO = 4

# regularizer codes
R_NONE = 0
R_L1 = 1
R_L2 = 2
R_NONNEG = 3
R_SIMPLEX = 4

# schedule codes
S_CONSTANT = 0
S_GEOMETRIC = 1
S_DIVERGENT = 2

# update modes
M_PLAIN = 0
M_AIG = 1
M_LOCK = 2


@njit(cache=True, nogil=True)
def step_size(kind, alpha0, rho, k):
    if kind == S_CONSTANT:
        return alpha0
    if kind == S_GEOMETRIC:
        return alpha0 * rho ** k
    return alpha0 / (k + 1.0)


@njit(cache=True, nogil=True)
def sigmoid(t):
    # exp of a non-positive argument cannot overflow; the select compiles branch-free
    e = math.exp(-abs(t))
    r = 1.0 / (1.0 + e)
    return r if t >= 0.0 else e * r


@njit(cache=True, nogil=True)
def scalar_coef(task, wx, y):
    """Gradient of the per-example loss is ``scalar_coef * x``."""
    if task == LS:
        return wx - y
    if task == LR:
        return -y * sigmoid(-y * wx)
    if task == SVM:
        if 1.0 - y * wx > 0.0:
            return -y
        return 0.0
    return 0.0


@njit(cache=True, nogil=True)
def scalar_loss(task, wx, y):
    if task == LS:
        r = wx - y
        return 0.5 * r * r
    if task == LR:
        m = -y * wx
        if m > 0.0:
            return m + math.log1p(math.exp(-m))
        return math.log1p(math.exp(m))
    if task == SVM:
        h = 1.0 - y * wx
        return h if h > 0.0 else 0.0
    return 0.0


@njit(cache=True, nogil=True, inline="always")
def prox_component(reg, v, alpha, mu):
    if reg == R_L1:
        t = alpha * mu
        if v > t:
            return v - t
        if v < -t:
            return v + t
        return 0.0
    if reg == R_L2:
        return v * (1.0 / (1.0 + 2.0 * alpha * mu))
    if reg == R_NONNEG:
        return v if v > 0.0 else 0.0
    return v


@njit(cache=True, nogil=True)
def project_simplex(v, out):
    """Euclidean projection of ``v`` onto the probability simplex (sort and threshold)."""
    n = v.size
    u = np.sort(v)[::-1]
    css = 0.0
    theta = 0.0
    for j in range(n):
        css += u[j]
        t = (css - 1.0) / (j + 1.0)
        if u[j] - t > 0.0:
            theta = t
    for j in range(n):
        x = v[j] - theta
        out[j] = x if x > 0.0 else 0.0


@njit(cache=True, nogil=True)
def prox_vector(reg, v, alpha, mu, out):
    if reg == R_SIMPLEX:
        project_simplex(v, out)
        return
    for j in range(v.size):
        out[j] = prox_component(reg, v[j], alpha, mu)


@njit(cache=True, nogil=True, inline="always")
def _write(w, j, c, xj, reg, alpha, mu, mode):
    """Apply ``w[j] <- prox(w[j] - c * xj)`` under the given update mode."""
    if mode == M_AIG:
        while True:
            old = w[j]
            new = prox_component(reg, old - c * xj, alpha, mu)
            if cas_f64(w, j, old, new):
                return new
    new = prox_component(reg, w[j] - c * xj, alpha, mu)
    w[j] = new
    return new


@njit(cache=True, nogil=True, inline="always")
def _dense_row_r(w, X, i, c, reg, a, mus, mode):
    ok = True
    for j in range(w.size):
        if not math.isfinite(_write(w, j, c, X[i, j], reg, a, mus[j], mode)):
            ok = False
    return ok


@njit(cache=True, nogil=True, inline="always")
def _dense_row_m(w, X, i, c, reg, a, mus, mode):
    if mode == M_PLAIN:
        return _dense_row_r(w, X, i, c, reg, a, mus, M_PLAIN)
    if mode == M_AIG:
        return _dense_row_r(w, X, i, c, reg, a, mus, M_AIG)
    return _dense_row_r(w, X, i, c, reg, a, mus, M_LOCK)


@njit(cache=True, nogil=True)
def _dense_row(w, X, i, c, reg, a, mus, mode):
    # dispatch once per tuple so each loop sees constant regularizer and mode codes
    if reg == R_NONE:
        return _dense_row_m(w, X, i, c, R_NONE, a, mus, mode)
    if reg == R_L1:
        return _dense_row_m(w, X, i, c, R_L1, a, mus, mode)
    if reg == R_L2:
        return _dense_row_m(w, X, i, c, R_L2, a, mus, mode)
    if reg == R_NONNEG:
        return _dense_row_m(w, X, i, c, R_NONNEG, a, mus, mode)
    return _dense_row_m(w, X, i, c, R_SIMPLEX, a, mus, mode)


@njit(cache=True, nogil=True, inline="always")
def _sparse_row_r(w, indices, values, lo, hi, c, reg, a, mus, mode):
    ok = True
    for p in range(lo, hi):
        j = indices[p]
        if not math.isfinite(_write(w, j, c, values[p], reg, a, mus[j], mode)):
            ok = False
    return ok


@njit(cache=True, nogil=True, inline="always")
def _sparse_row_m(w, indices, values, lo, hi, c, reg, a, mus, mode):
    if mode == M_PLAIN:
        return _sparse_row_r(w, indices, values, lo, hi, c, reg, a, mus, M_PLAIN)
    if mode == M_AIG:
        return _sparse_row_r(w, indices, values, lo, hi, c, reg, a, mus, M_AIG)
    return _sparse_row_r(w, indices, values, lo, hi, c, reg, a, mus, M_LOCK)


@njit(cache=True, nogil=True)
def _sparse_row(w, indices, values, lo, hi, c, reg, a, mus, mode):
    if reg == R_NONE:
        return _sparse_row_m(w, indices, values, lo, hi, c, R_NONE, a, mus, mode)
    if reg == R_L1:
        return _sparse_row_m(w, indices, values, lo, hi, c, R_L1, a, mus, mode)
    if reg == R_L2:
        return _sparse_row_m(w, indices, values, lo, hi, c, R_L2, a, mus, mode)
    if reg == R_NONNEG:
        return _sparse_row_m(w, indices, values, lo, hi, c, R_NONNEG, a, mus, mode)
    return _sparse_row_m(w, indices, values, lo, hi, c, R_SIMPLEX, a, mus, mode)


@njit(cache=True, nogil=True, inline="always")
def _dense_fast_r(w, X, i, c, reg, a, mus, uniform):
    if uniform:
        mu = mus[0]
        for j in range(w.size):
            w[j] = prox_component(reg, w[j] - c * X[i, j], a, mu)
    else:
        for j in range(w.size):
            w[j] = prox_component(reg, w[j] - c * X[i, j], a, mus[j])


@njit(cache=True, nogil=True)
def _dense_fast(w, X, i, c, reg, a, mus, uniform):
    if reg == R_NONE:
        _dense_fast_r(w, X, i, c, R_NONE, a, mus, uniform)
    elif reg == R_L1:
        _dense_fast_r(w, X, i, c, R_L1, a, mus, uniform)
    elif reg == R_L2:
        _dense_fast_r(w, X, i, c, R_L2, a, mus, uniform)
    else:
        _dense_fast_r(w, X, i, c, R_NONNEG, a, mus, uniform)


@njit(cache=True, nogil=True, inline="always")
def _sparse_fast_r(w, indices, values, lo, hi, c, reg, a, mus):
    for p in range(lo, hi):
        j = indices[p]
        w[j] = prox_component(reg, w[j] - c * values[p], a, mus[j])


@njit(cache=True, nogil=True)
def _sparse_fast(w, indices, values, lo, hi, c, reg, a, mus):
    if reg == R_NONE:
        _sparse_fast_r(w, indices, values, lo, hi, c, R_NONE, a, mus)
    elif reg == R_L1:
        _sparse_fast_r(w, indices, values, lo, hi, c, R_L1, a, mus)
    elif reg == R_L2:
        _sparse_fast_r(w, indices, values, lo, hi, c, R_L2, a, mus)
    else:
        _sparse_fast_r(w, indices, values, lo, hi, c, R_NONNEG, a, mus)


@njit(cache=True, nogil=True)
def _absmax(w):
    m = 0.0
    for j in range(w.size):
        v = abs(w[j])
        if not v <= m:  # also propagates NaN
            m = v
    return m


@njit(cache=True, nogil=True)
def _uniform(mus):
    for j in range(1, mus.size):
        if mus[j] != mus[0]:
            return False
    return mus.size > 0


# ---------------------------------------------------------------- epochs
#
# Common contract: process ``order`` front to back starting at step index k0,
# stop early when ``signal[0] == 0``.  Returns (k_end, bad) where bad is the
# position in ``order`` whose update produced a non-finite component, or -1.
# ``mus[j]`` is the penalty weight one step applies to component j: the
# penalty is split over the tuples touching j, so one epoch applies it once.
#
# Single-writer runs skip the per-component finiteness test while a running
# bound B >= max|w| stays far from overflow.  Every prox except the simplex
# projection is non-expansive toward zero, so a step grows max|w| by at most
# |c| * max|x_i|.  Once B reaches SAFE_BOUND (or c is not finite) each step is
# checked exactly and B is recomputed, so the offending step is still exact.

SAFE_BOUND = 1e300


@njit(cache=True, nogil=True)
def epoch_dense(task, reg, mus, X, y, xmax, order, w, k0, skind, alpha0, rho, mode, lock,
                signal):
    d = w.size
    k = k0
    tmp = np.empty(d) if reg == R_SIMPLEX else np.empty(0)
    fast = mode == M_PLAIN and reg != R_SIMPLEX
    uniform = _uniform(mus)
    bound = _absmax(w) if fast else 0.0
    for t in range(order.size):
        if load_i64(signal, 0) == 0:
            break
        i = order[t]
        a = step_size(skind, alpha0, rho, k)
        if mode == M_LOCK:
            spin_acquire(lock)
        wx = 0.0
        for j in range(d):
            wx += w[j] * X[i, j]
        c = a * scalar_coef(task, wx, y[i])
        ok = True
        if c != 0.0 or reg != R_NONE:
            if fast:
                bound += abs(c) * xmax[i]
                if bound < SAFE_BOUND:
                    _dense_fast(w, X, i, c, reg, a, mus, uniform)
                else:
                    ok = _dense_row(w, X, i, c, reg, a, mus, mode)
                    bound = _absmax(w)
            else:
                ok = _dense_row(w, X, i, c, reg, a, mus, mode)
                if reg == R_SIMPLEX:
                    project_simplex(w, tmp)
                    for j in range(d):
                        w[j] = tmp[j]
        if mode == M_LOCK:
            spin_release(lock)
        k += 1
        if not ok:
            return k, t
    return k, -1


@njit(cache=True, nogil=True)
def epoch_sparse(task, reg, mus, indptr, indices, values, y, xmax, order, w, k0, skind, alpha0,
                 rho, mode, lock, signal):
    k = k0
    fast = mode == M_PLAIN and reg != R_SIMPLEX
    bound = _absmax(w) if fast else 0.0
    for t in range(order.size):
        if load_i64(signal, 0) == 0:
            break
        i = order[t]
        a = step_size(skind, alpha0, rho, k)
        lo = indptr[i]
        hi = indptr[i + 1]
        if mode == M_LOCK:
            spin_acquire(lock)
        wx = 0.0
        for p in range(lo, hi):
            wx += w[indices[p]] * values[p]
        c = a * scalar_coef(task, wx, y[i])
        ok = True
        if c != 0.0 or reg != R_NONE:
            if fast:
                bound += abs(c) * xmax[i]
                if bound < SAFE_BOUND:
                    _sparse_fast(w, indices, values, lo, hi, c, reg, a, mus)
                else:
                    ok = _sparse_row(w, indices, values, lo, hi, c, reg, a, mus, mode)
                    bound = _absmax(w)
            else:
                ok = _sparse_row(w, indices, values, lo, hi, c, reg, a, mus, mode)
        if mode == M_LOCK:
            spin_release(lock)
        k += 1
        if not ok:
            return k, t
    return k, -1


@njit(cache=True, nogil=True)
def _cell_write(F, base, q, g_other, e, mu_cnt, reg, a, mu, mode):
    # F[base+q] <- prox(F - a * (2 e g_other + 2 mu_cnt F))
    if mode == M_AIG:
        while True:
            old = F[base + q]
            new = prox_component(reg, old - a * (2.0 * e * g_other + 2.0 * mu_cnt * old), a, mu)
            if cas_f64(F, base + q, old, new):
                return new
    old = F[base + q]
    new = prox_component(reg, old - a * (2.0 * e * g_other + 2.0 * mu_cnt * old), a, mu)
    F[base + q] = new
    return new


@njit(cache=True, nogil=True)
def epoch_cells(reg, mu, rows, cols, vals, row_counts, col_counts, order, L, R, r, k0,
                skind, alpha0, rho, mode, lock, signal):
    # L2 is the Frobenius penalty and lives in the gradient; other regularizers use prox.
    in_grad = reg == R_L2
    preg = R_NONE if in_grad else reg
    k = k0
    for t in range(order.size):
        if load_i64(signal, 0) == 0:
            break
        c = order[t]
        i = rows[c]
        j = cols[c]
        a = step_size(skind, alpha0, rho, k)
        bi = i * r
        bj = j * r
        mu_i = mu / row_counts[i]
        mu_j = mu / col_counts[j]
        gi = mu_i if in_grad else 0.0
        gj = mu_j if in_grad else 0.0
        if mode == M_LOCK:
            spin_acquire(lock)
        e = -vals[c]
        for q in range(r):
            e += L[bi + q] * R[bj + q]
        ok = True
        for q in range(r):
            li = L[bi + q]
            rj = R[bj + q]
            nl = _cell_write(L, bi, q, rj, e, gi, preg, a, mu_i, mode)
            nr = _cell_write(R, bj, q, li, e, gj, preg, a, mu_j, mode)
            if not (math.isfinite(nl) and math.isfinite(nr)):
                ok = False
        if mode == M_LOCK:
            spin_release(lock)
        k += 1
        if not ok:
            return k, t
    return k, -1


@njit(cache=True, nogil=True)
def epoch_portfolio(p, sigma, order, w, k0, skind, alpha0, rho, signal):
    d = w.size
    k = k0
    v = np.empty(d)
    for t in range(order.size):
        if load_i64(signal, 0) == 0:
            break
        a = step_size(skind, alpha0, rho, k)
        ok = True
        for j in range(d):
            g = p[j]
            for q in range(d):
                g += 2.0 * sigma[j, q] * w[q]
            v[j] = w[j] - a * g
        project_simplex(v, w)
        for j in range(d):
            if not math.isfinite(w[j]):
                ok = False
        k += 1
        if not ok:
            return k, t
    return k, -1


# ------------------------------------------------------------ NULL aggregate
# Reads every field of every tuple and folds it into a checksum, but never
# touches a model.


@njit(cache=True, nogil=True)
def null_dense(X, y, order, signal):
    acc = 0.0
    n = 0
    for t in range(order.size):
        if load_i64(signal, 0) == 0:
            break
        i = order[t]
        s = y[i]
        for j in range(X.shape[1]):
            s += X[i, j]
        acc += s
        n += 1
    return n, acc


@njit(cache=True, nogil=True)
def null_sparse(indptr, indices, values, y, order, signal):
    acc = 0.0
    n = 0
    for t in range(order.size):
        if load_i64(signal, 0) == 0:
            break
        i = order[t]
        s = y[i]
        for p in range(indptr[i], indptr[i + 1]):
            s += values[p] + indices[p]
        acc += s
        n += 1
    return n, acc


@njit(cache=True, nogil=True)
def null_cells(rows, cols, vals, order, signal):
    acc = 0.0
    n = 0
    for t in range(order.size):
        if load_i64(signal, 0) == 0:
            break
        c = order[t]
        acc += vals[c] + rows[c] + cols[c]
        n += 1
    return n, acc


# ------------------------------------------------------------------ losses


@njit(cache=True, nogil=True)
def loss_dense(task, X, y, w):
    total = 0.0
    for i in range(X.shape[0]):
        wx = 0.0
        for j in range(w.size):
            wx += w[j] * X[i, j]
        total += scalar_loss(task, wx, y[i])
    return total


@njit(cache=True, nogil=True)
def loss_sparse(task, indptr, indices, values, y, w):
    total = 0.0
    for i in range(y.size):
        wx = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            wx += w[indices[p]] * values[p]
        total += scalar_loss(task, wx, y[i])
    return total


@njit(cache=True, nogil=True)
def loss_cells(reg, mu, rows, cols, vals, row_counts, col_counts, L, R, r):
    total = 0.0
    for c in range(vals.size):
        bi = rows[c] * r
        bj = cols[c] * r
        e = -vals[c]
        nl = 0.0
        nr = 0.0
        for q in range(r):
            e += L[bi + q] * R[bj + q]
            nl += L[bi + q] * L[bi + q]
            nr += R[bj + q] * R[bj + q]
        total += e * e
        if reg == R_L2:
            total += mu * (nl / row_counts[rows[c]] + nr / col_counts[cols[c]])
    return total


# --------------------------------------------------------- full gradients


@njit(cache=True, nogil=True)
def grad_dense(task, X, y, w, out):
    for j in range(w.size):
        out[j] = 0.0
    for i in range(X.shape[0]):
        wx = 0.0
        for j in range(w.size):
            wx += w[j] * X[i, j]
        c = scalar_coef(task, wx, y[i])
        if c != 0.0:
            for j in range(w.size):
                out[j] += c * X[i, j]


@njit(cache=True, nogil=True)
def grad_sparse(task, indptr, indices, values, y, w, out):
    for j in range(w.size):
        out[j] = 0.0
    for i in range(y.size):
        wx = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            wx += w[indices[p]] * values[p]
        c = scalar_coef(task, wx, y[i])
        if c != 0.0:
            for p in range(indptr[i], indptr[i + 1]):
                out[indices[p]] += c * values[p]


@njit(cache=True, nogil=True)
def grad_cells(reg, mu, rows, cols, vals, row_counts, col_counts, L, R, r, gL, gR):
    gL[:] = 0.0
    gR[:] = 0.0
    in_grad = reg == R_L2
    for c in range(vals.size):
        bi = rows[c] * r
        bj = cols[c] * r
        e = -vals[c]
        for q in range(r):
            e += L[bi + q] * R[bj + q]
        mu_i = mu / row_counts[rows[c]] if in_grad else 0.0
        mu_j = mu / col_counts[cols[c]] if in_grad else 0.0
        for q in range(r):
            gL[bi + q] += 2.0 * e * R[bj + q] + 2.0 * mu_i * L[bi + q]
            gR[bj + q] += 2.0 * e * L[bi + q] + 2.0 * mu_j * R[bj + q]


# -------------------------------------------------------------- reservoir


@njit(cache=True, nogil=True)
def reservoir_chunk(start, stop, slots, counters, draws, dropped):
    """Offer items ``start..stop-1`` to a reservoir of capacity ``slots.size``.

    ``counters[0]`` is the number of items offered so far.  ``draws[s - m]``
    is the uniform draw in ``[0, s + 1)`` used for the offer made when ``s``
    items have already been seen.  Dropped items are written to ``dropped``;
    the count is returned.
    """
    m = slots.size
    nd = 0
    for item in range(start, stop):
        seen = counters[0]
        if seen < m:
            slots[seen] = item
        else:
            s = draws[seen - m]
            if s < m:
                dropped[nd] = slots[s]
                slots[s] = item
            else:
                dropped[nd] = item
            nd += 1
        counters[0] = seen + 1
    return nd
