"""Bagged CART regression forest of psi(Y, theta) on X.

Trees are grown on bootstrap resamples with squared-error splits over
exactly ``mtry`` randomly drawn coordinates per node; a node becomes a leaf
when it cannot be split into two children of at least ``min_leaf`` rows.
Each tree re-seeds the compiled generator from its own seed, so the forest
does not depend on the order in which trees are grown.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numba import njit

from ..core import _as_tau, psi
from ..errors import DataError

N_TREES = 500
MIN_LEAF = 5


@njit(cache=True, nogil=True)
def _sort_pairs(keys, vals, n):
    """In-place sort of ``keys[:n]`` carrying ``vals``; quicksort with insertion finish."""
    stack = np.empty(128, dtype=np.int64)
    top = 0
    lo = 0
    hi = n - 1
    while True:
        while hi - lo > 16:
            mid = (lo + hi) >> 1
            # median of three into keys[mid]
            if keys[mid] < keys[lo]:
                keys[mid], keys[lo] = keys[lo], keys[mid]
                vals[mid], vals[lo] = vals[lo], vals[mid]
            if keys[hi] < keys[lo]:
                keys[hi], keys[lo] = keys[lo], keys[hi]
                vals[hi], vals[lo] = vals[lo], vals[hi]
            if keys[hi] < keys[mid]:
                keys[hi], keys[mid] = keys[mid], keys[hi]
                vals[hi], vals[mid] = vals[mid], vals[hi]
            pivot = keys[mid]
            i = lo
            j = hi
            while i <= j:
                while keys[i] < pivot:
                    i += 1
                while keys[j] > pivot:
                    j -= 1
                if i <= j:
                    keys[i], keys[j] = keys[j], keys[i]
                    vals[i], vals[j] = vals[j], vals[i]
                    i += 1
                    j -= 1
            # recurse into the smaller side later, loop on the larger
            if j - lo < hi - i:
                stack[top] = i
                stack[top + 1] = hi
                hi = j
            else:
                stack[top] = lo
                stack[top + 1] = j
                lo = i
            top += 2
        for a in range(lo + 1, hi + 1):
            k = keys[a]
            v = vals[a]
            b = a - 1
            while b >= lo and keys[b] > k:
                keys[b + 1] = keys[b]
                vals[b + 1] = vals[b]
                b -= 1
            keys[b + 1] = k
            vals[b + 1] = v
        if top == 0:
            return
        top -= 2
        lo = stack[top]
        hi = stack[top + 1]


@njit(cache=True, nogil=True)
def _grow_tree(X, y, boot, mtry, min_leaf, feat, thr, left, right, value):
    """Grow one tree on rows ``boot``; returns the node count.

    Node arrays must hold at least ``2 * len(boot)`` entries.
    """
    m, p = X.shape
    idx = boot.copy()
    cand = np.arange(p)
    # explicit stack of (node, start, end)
    stack = np.empty((2 * idx.shape[0] + 2, 3), dtype=np.int64)
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = idx.shape[0]
    top = 1
    n_nodes = 1
    xs = np.empty(idx.shape[0])
    ys = np.empty(idx.shape[0])
    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        size = end - start
        total = 0.0
        pure = True
        first = y[idx[start]]
        for k in range(start, end):
            total += y[idx[k]]
            if y[idx[k]] != first:
                pure = False
        value[node] = total / size
        feat[node] = -1
        if size < 2 * min_leaf or pure:
            continue
        best_gain = 0.0
        best_f = -1
        best_t = 0.0
        # partial Fisher-Yates: first mtry entries of cand are the draw
        for c in range(mtry):
            r = c + np.random.randint(p - c)
            tmp = cand[c]
            cand[c] = cand[r]
            cand[r] = tmp
        for c in range(mtry):
            f = cand[c]
            for k in range(size):
                row = idx[start + k]
                xs[k] = X[row, f]
                ys[k] = y[row]
            _sort_pairs(xs, ys, size)
            left_sum = 0.0
            for k in range(size - 1):
                left_sum += ys[k]
                nl = k + 1
                nr = size - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                a = xs[k]
                b = xs[k + 1]
                if a == b:
                    continue
                right_sum = total - left_sum
                # SSE reduction up to the constant total^2 / size
                gain = left_sum * left_sum / nl + right_sum * right_sum / nr - total * total / size
                if gain > best_gain + 1e-12 * abs(best_gain):
                    best_gain = gain
                    best_f = f
                    best_t = 0.5 * (a + b)
        if best_f < 0:
            continue
        # partition idx[start:end] in place
        i = start
        j = end - 1
        while i <= j:
            if X[idx[i], best_f] <= best_t:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        feat[node] = best_f
        thr[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top, 0] = n_nodes
        stack[top, 1] = start
        stack[top, 2] = i
        stack[top + 1, 0] = n_nodes + 1
        stack[top + 1, 1] = i
        stack[top + 1, 2] = end
        top += 2
        n_nodes += 2
    return n_nodes


@njit(cache=True, nogil=True)
def _grow_forest(X, y, seeds, boot_size, mtry, min_leaf):
    m = X.shape[0]
    T = seeds.shape[0]
    cap = 2 * boot_size + 1
    feat = np.full((T, cap), -1, dtype=np.int64)
    thr = np.zeros((T, cap))
    left = np.zeros((T, cap), dtype=np.int64)
    right = np.zeros((T, cap), dtype=np.int64)
    value = np.zeros((T, cap))
    inbag = np.zeros((T, m), dtype=np.int32)
    sizes = np.zeros(T, dtype=np.int64)
    for t in range(T):
        np.random.seed(seeds[t])
        boot = np.empty(boot_size, dtype=np.int64)
        for k in range(boot_size):
            boot[k] = np.random.randint(m)
            inbag[t, boot[k]] += 1
        sizes[t] = _grow_tree(X, y, boot, mtry, min_leaf,
                              feat[t], thr[t], left[t], right[t], value[t])
    return feat, thr, left, right, value, inbag, sizes


@njit(cache=True, nogil=True)
def _tree_predict(feat, thr, left, right, value, X, out):
    for q in range(X.shape[0]):
        node = 0
        while feat[node] >= 0:
            if X[q, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[q] = value[node]


@njit(cache=True, nogil=True)
def _forest_predict(feat, thr, left, right, value, X, mask):
    """Mean over trees; ``mask[t, q]`` false excludes tree t for row q (OOB use)."""
    T = feat.shape[0]
    Q = X.shape[0]
    acc = np.zeros(Q)
    cnt = np.zeros(Q)
    buf = np.empty(Q)
    for t in range(T):
        _tree_predict(feat[t], thr[t], left[t], right[t], value[t], X, buf)
        for q in range(Q):
            if mask[t, q]:
                acc[q] += buf[q]
                cnt[q] += 1.0
    for q in range(Q):
        acc[q] = acc[q] / cnt[q] if cnt[q] > 0 else np.nan
    return acc


@dataclass(frozen=True)
class ForestModel:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    inbag: np.ndarray
    train_x: np.ndarray
    n_trees: int
    mtry: int
    min_leaf: int
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def _arrays(self):
        return self.feature, self.threshold, self.left, self.right, self.value

    def predict(self, x, theta=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x = np.ascontiguousarray(x[None, :] if x.ndim == 1 else x)
        mask = np.ones((self.n_trees, x.shape[0]), dtype=np.bool_)
        return _forest_predict(*self._arrays(), x, mask)

    def predict_tree(self, t: int, x) -> np.ndarray:
        x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=float)))
        out = np.empty(x.shape[0])
        _tree_predict(self.feature[t], self.threshold[t], self.left[t], self.right[t],
                      self.value[t], x, out)
        return out

    def oob_predict(self) -> np.ndarray:
        """Out-of-bag prediction at each training row (NaN if always in bag)."""
        mask = self.inbag == 0
        return _forest_predict(*self._arrays(), self.train_x, mask)


def fit_forest(train_y, train_x, theta: float, tau, n_trees: int = N_TREES,
               mtry: int | None = None, min_leaf: int = MIN_LEAF,
               rng: np.random.Generator | None = None, response=None) -> ForestModel:
    """Random forest regression of psi(Y, theta) on X.

    ``mtry`` defaults to ``ceil(sqrt(p))``; bootstrap samples have the size
    of the training set. Passing ``response`` overrides psi, which is
    handy for testing the tree grower on its own.
    """
    tau = _as_tau(tau)
    x = np.asarray(train_x, dtype=float)
    x = np.ascontiguousarray(x if x.ndim == 2 else x[:, None])
    m, p = x.shape
    y = psi(train_y, theta, tau) if response is None else np.asarray(response, dtype=float)
    if y.shape[0] != m:
        raise DataError("x and y differ in length")
    mtry = math.ceil(math.sqrt(p)) if mtry is None else int(mtry)
    if not 1 <= mtry <= p:
        raise DataError(f"mtry must lie in [1, {p}]")
    if n_trees < 1 or min_leaf < 1:
        raise DataError("n_trees and min_leaf must be positive")
    if m < 2 * min_leaf and min_leaf < m:
        raise DataError(f"forest needs at least {2 * min_leaf} training rows")
    rng = rng if rng is not None else np.random.default_rng(0)
    seeds = rng.integers(0, 2**32 - 1, size=n_trees, dtype=np.int64)
    feat, thr, left, right, value, inbag, sizes = _grow_forest(
        x, np.ascontiguousarray(y, dtype=float), seeds, m, mtry, min_leaf)
    width = int(sizes.max())
    return ForestModel(feat[:, :width].copy(), thr[:, :width].copy(), left[:, :width].copy(),
                       right[:, :width].copy(), value[:, :width].copy(), inbag, x,
                       int(n_trees), mtry, int(min_leaf),
                       {"mean_nodes": float(sizes.mean())})


@dataclass(frozen=True)
class ForestStrategy:
    tau: float
    n_trees: int = N_TREES
    mtry: int | None = None
    min_leaf: int = MIN_LEAF

    def fit(self, y, x, theta, rng=None) -> ForestModel:
        return fit_forest(y, x, theta, self.tau, self.n_trees, self.mtry, self.min_leaf, rng)
