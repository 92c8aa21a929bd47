"""Compiled kernels for squared-error regression trees.

Rows enter as per-feature index arrays presorted by feature value.  Splitting a
node stably partitions every feature's segment, so no node ever re-sorts.
Bootstrap resampling is expressed as integer row multiplicities.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Split gains within this fraction of the node's sum of squares count as ties.
TIE_RTOL = 1e-10

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, nogil=True)
def _splitmix64(x):
    z = x + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _uniform_index(key, counter, bound):
    # Counter-based draw in [0, bound); modulo bias is below 2**-40 for bound < 2**24.
    r = _splitmix64(key ^ _splitmix64(np.uint64(counter)))
    return np.int64(r % np.uint64(bound))


@njit(cache=True, nogil=True)
def build_tree(X, y, counts, sorted_idx, max_depth, min_leaf, mtry, key):
    """Grow one tree.

    Parameters
    ----------
    X : (n, d) float64
    y : (n,) float64
    counts : (n,) int64
        Row multiplicities; zero rows are absent.
    sorted_idx : (d, m) int64
        Rows with nonzero count, ordered by each feature's value.
    max_depth, min_leaf, mtry : int
    key : uint64
        Seed for feature subsampling when ``mtry < d``.

    Returns
    -------
    feature, threshold, left, right, value, n_nodes
        Node arrays in depth-first preorder; ``feature == -1`` marks a leaf.
    """
    d = sorted_idx.shape[0]
    m = sorted_idx.shape[1]
    idx = sorted_idx.copy()
    tmp = np.empty(m, dtype=np.int64)
    goes_left = np.zeros(X.shape[0], dtype=np.bool_)

    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap, dtype=np.float64)

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = m
    st_depth[0] = 0
    top = 1
    n_nodes = 1

    feats = np.arange(d)
    cand = np.empty(d, dtype=np.int64)
    draw = 0

    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]

        # node statistics, in feature-0 order
        W = 0
        S = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(start, end):
            r = idx[0, i]
            c = counts[r]
            W += c
            S += c * y[r]
            if y[r] < ymin:
                ymin = y[r]
            if y[r] > ymax:
                ymax = y[r]
        if ymin == ymax:
            value[node] = ymin
            continue
        mean = S / W
        value[node] = mean
        if depth >= max_depth or W < 2 * min_leaf:
            continue

        sc = 0.0
        sse = 0.0
        for i in range(start, end):
            r = idx[0, i]
            dev = y[r] - mean
            sc += counts[r] * dev
            sse += counts[r] * dev * dev
        tol = TIE_RTOL * sse

        # candidate features, ascending so ties resolve to the lowest index
        if mtry >= d:
            n_cand = d
            for j in range(d):
                cand[j] = j
        else:
            for j in range(d):
                feats[j] = j
            for j in range(mtry):
                k = j + _uniform_index(key, draw, d - j)
                draw += 1
                t = feats[j]
                feats[j] = feats[k]
                feats[k] = t
            n_cand = mtry
            for j in range(mtry):
                cand[j] = feats[j]
            cand[:mtry].sort()

        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        base = sc * sc / W
        for jj in range(n_cand):
            f = cand[jj]
            wl = 0
            sl = 0.0
            for i in range(start, end - 1):
                r = idx[f, i]
                wl += counts[r]
                sl += counts[r] * (y[r] - mean)
                xr = X[r, f]
                xn = X[idx[f, i + 1], f]
                if xn <= xr:
                    continue
                wr = W - wl
                if wl < min_leaf or wr < min_leaf:
                    continue
                sr = sc - sl
                gain = sl * sl / wl + sr * sr / wr - base
                if gain > best_gain + tol:
                    best_gain = gain
                    best_f = f
                    thr = 0.5 * xr + 0.5 * xn
                    if not (thr < xn):
                        thr = xr
                    best_thr = thr
        if best_f < 0:
            continue

        # partition every feature's segment stably
        n_left = 0
        for i in range(start, end):
            r = idx[best_f, i]
            gl = X[r, best_f] <= best_thr
            goes_left[r] = gl
            if gl:
                n_left += 1
        for g in range(d):
            a = 0
            b = n_left
            for i in range(start, end):
                r = idx[g, i]
                if goes_left[r]:
                    tmp[a] = r
                    a += 1
                else:
                    tmp[b] = r
                    b += 1
            for i in range(end - start):
                idx[g, start + i] = tmp[i]

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lc
        right[node] = rc
        # push right first so the left subtree is numbered first
        st_node[top] = rc
        st_start[top] = start + n_left
        st_end[top] = end
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = lc
        st_start[top] = start
        st_end[top] = start + n_left
        st_depth[top] = depth + 1
        top += 1

    return feature, threshold, left, right, value, n_nodes


@njit(cache=True, nogil=True)
def predict_forest(packed, threshold, value, roots, X, out):
    """Average leaf values over trees stored in flat node arrays.

    ``packed[2k]`` is node ``k``'s split feature (-1 for a leaf) and
    ``packed[2k+1]`` its left child; the right child is always left + 1.
    Trees are visited one at a time so a tree's nodes stay cache resident.
    A row whose trees all agree gets that value exactly.
    """
    n = X.shape[0]
    n_trees = roots.shape[0]
    first = np.empty(n)
    same = np.ones(n, dtype=np.bool_)
    for i in range(n):
        out[i] = 0.0
    for t in range(n_trees):
        root = roots[t]
        for i in range(n):
            node = root
            f = packed[2 * node]
            while f >= 0:
                node = packed[2 * node + 1] + (X[i, f] > threshold[node])
                f = packed[2 * node]
            v = value[node]
            if t == 0:
                first[i] = v
            elif v != first[i]:
                same[i] = False
            out[i] += v
    for i in range(n):
        out[i] = first[i] if same[i] else out[i] / n_trees
