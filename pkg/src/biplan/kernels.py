"""Hot numeric kernels, each with a numba path and a vectorized numpy path.

Dispatch is decided by :data:`biplan._accel.USE_NUMBA`. Both paths return the
same values up to floating point summation order; ``tests/test_kernels.py``
cross-checks them on random inputs.
"""
from __future__ import annotations

import numpy as np

from biplan._accel import USE_NUMBA, njit

EXACT_SQ = 1e-24


# ---------------------------------------------------------------- k-NN regression

@njit
def knn_regress_numba(train_x, train_y, starts, stops, queries, qbucket, k):
    n_query = queries.shape[0]
    n_feat = queries.shape[1]
    n_out = train_y.shape[1]
    out = np.zeros((n_query, n_out))
    best_d = np.empty(k)
    best_i = np.empty(k, dtype=np.int64)
    for q in range(n_query):
        b = qbucket[q]
        if b < 0:
            continue
        m = 0
        for r in range(starts[b], stops[b]):
            d = 0.0
            for f in range(n_feat):
                t = train_x[r, f] - queries[q, f]
                d += t * t
            if m < k:
                pos = m
                m += 1
            elif d < best_d[k - 1]:
                pos = k - 1
            else:
                continue
            while pos > 0 and best_d[pos - 1] > d:
                best_d[pos] = best_d[pos - 1]
                best_i[pos] = best_i[pos - 1]
                pos -= 1
            best_d[pos] = d
            best_i[pos] = r
        if m == 0:
            continue
        if best_d[0] <= EXACT_SQ:
            cnt = 0
            for t in range(m):
                if best_d[t] <= EXACT_SQ:
                    for o in range(n_out):
                        out[q, o] += train_y[best_i[t], o]
                    cnt += 1
            for o in range(n_out):
                out[q, o] /= cnt
        else:
            wsum = 0.0
            for t in range(m):
                w = 1.0 / np.sqrt(best_d[t])
                wsum += w
                for o in range(n_out):
                    out[q, o] += w * train_y[best_i[t], o]
            for o in range(n_out):
                out[q, o] /= wsum
    return out


def knn_regress_numpy(train_x, train_y, starts, stops, queries, qbucket, k, chunk=256):
    out = np.zeros((queries.shape[0], train_y.shape[1]))
    for b in np.unique(qbucket):
        if b < 0:
            continue
        s, e = int(starts[b]), int(stops[b])
        if e <= s:
            continue
        qi = np.flatnonzero(qbucket == b)
        xs, ys = train_x[s:e], train_y[s:e]
        kk = min(k, e - s)
        for c in range(0, qi.size, chunk):
            idx = qi[c:c + chunk]
            # accumulate feature by feature, as the numba loop does, so ties break identically
            d2 = np.zeros((idx.size, e - s))
            for f in range(queries.shape[1]):
                t = queries[idx, None, f] - xs[None, :, f]
                d2 += t * t
            order = np.argsort(d2, axis=1, kind="stable")[:, :kk]
            dk = np.take_along_axis(d2, order, axis=1)
            yk = ys[order]
            exact = dk <= EXACT_SQ
            has_exact = exact[:, 0]
            with np.errstate(divide="ignore"):
                w = np.where(has_exact[:, None], exact.astype(float), 1.0 / np.sqrt(np.where(exact, 1.0, dk)))
            out[idx] = np.einsum("qk,qko->qo", w, yk) / w.sum(axis=1, keepdims=True)
    return out


def knn_regress(train_x, train_y, starts, stops, queries, qbucket, k):
    """Inverse-distance-weighted k-NN over contiguous row buckets.

    ``train_x[starts[b]:stops[b]]`` holds the candidate rows for bucket ``b``;
    query ``q`` only searches bucket ``qbucket[q]`` (negative means no data,
    predicted as zeros). Exact feature matches short-circuit the weighting and
    return the mean of the exactly matching neighbors.
    """
    if USE_NUMBA:
        return knn_regress_numba(train_x, train_y, starts, stops, queries, qbucket, k)
    return knn_regress_numpy(train_x, train_y, starts, stops, queries, qbucket, k)


# ---------------------------------------------------------------- relaxed planning

@njit
def relaxed_costs_numba(true_atoms, pre_ptr, pre_idx, add_ptr, add_idx, use_max):
    n_atoms = true_atoms.shape[0]
    n_act = pre_ptr.shape[0] - 1
    cost = np.full(n_atoms, np.inf)
    for a in range(n_atoms):
        if true_atoms[a]:
            cost[a] = 0.0
    changed = True
    while changed:
        changed = False
        for a in range(n_act):
            c = 0.0
            for p in range(pre_ptr[a], pre_ptr[a + 1]):
                v = cost[pre_idx[p]]
                if v == np.inf:
                    c = np.inf
                    break
                if use_max:
                    if v > c:
                        c = v
                else:
                    c += v
            if c == np.inf:
                continue
            c += 1.0
            for p in range(add_ptr[a], add_ptr[a + 1]):
                q = add_idx[p]
                if c < cost[q]:
                    cost[q] = c
                    changed = True
    return cost


def relaxed_costs_numpy(true_atoms, pre_ptr, pre_idx, add_ptr, add_idx, use_max):
    n_atoms = true_atoms.shape[0]
    n_act = pre_ptr.shape[0] - 1
    pre = np.zeros((n_act, n_atoms), dtype=bool)
    pre[np.repeat(np.arange(n_act), np.diff(pre_ptr)), pre_idx] = True
    add_rows = np.repeat(np.arange(n_act), np.diff(add_ptr))
    cost = np.where(true_atoms, 0.0, np.inf)
    while True:
        masked = np.where(pre, cost[None, :], 0.0)
        act = masked.max(axis=1) if use_max else masked.sum(axis=1)
        new = cost.copy()
        np.minimum.at(new, add_idx, act[add_rows] + 1.0)
        if np.array_equal(new, cost):
            return cost
        cost = new


def relaxed_costs(true_atoms, pre_ptr, pre_idx, add_ptr, add_idx, use_max=False):
    """Per-atom cost fixpoint of the delete relaxation (h_add, or h_max if ``use_max``).

    Actions are given in CSR form: positive-precondition atoms
    ``pre_idx[pre_ptr[a]:pre_ptr[a+1]]`` and add atoms likewise. Negative
    preconditions are ignored by the relaxation. Unreachable atoms get ``inf``.
    """
    if USE_NUMBA:
        return relaxed_costs_numba(true_atoms, pre_ptr, pre_idx, add_ptr, add_idx, use_max)
    return relaxed_costs_numpy(true_atoms, pre_ptr, pre_idx, add_ptr, add_idx, use_max)
