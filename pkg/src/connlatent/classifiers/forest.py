"""Random forest of Gini decision trees on bootstrap resamples.

Each tree sees a bootstrap resample (as per-row counts) and considers
``ceil(sqrt(d))`` random features at every split. Tree growth runs
entirely in numba; nodes are expanded breadth-first so the random draws
happen in a fixed order. Each tree's random stream (bootstrap draws and
feature choices) is seeded from ``(seed, tree_index)``, so a forest is
reproducible whatever the execution order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import ConfigError, ShapeError


@dataclass
class ForestModel:
    feature: np.ndarray  # per node; -1 for leaves
    split: np.ndarray  # per node threshold, go left if x <= split
    left: np.ndarray  # global node ids
    right: np.ndarray
    value: np.ndarray  # fraction of (bootstrap-weighted) ASD samples at node
    depth: np.ndarray
    roots: np.ndarray  # node id of each tree's root
    n_trees: int
    max_depth: int
    n_features: int
    seed: int
    threshold: float = 0.5

    def tree_depths(self):
        ends = np.append(self.roots[1:], len(self.feature))
        return np.array([self.depth[a:b].max() for a, b in zip(self.roots, ends)])

    def subforest(self, n_trees, max_depth):
        """The forest ``rf_fit`` would grow with fewer trees or a smaller depth.

        Tree seeds do not depend on the forest size, and breadth-first
        growth finishes every shallower level before drawing for a deeper
        one, so both limits are exact prefixes of this forest.
        """
        if n_trees > self.n_trees or max_depth > self.max_depth:
            raise ConfigError("a subforest cannot be larger than its parent")
        end = self.roots[n_trees] if n_trees < self.n_trees else len(self.feature)
        keep = self.depth[:end] <= max_depth
        new_id = np.cumsum(keep) - 1
        cut = self.depth[:end] >= max_depth
        feature = np.where(cut, -1, self.feature[:end])[keep]
        split = np.where(cut, 0.0, self.split[:end])[keep]
        left = np.where(feature >= 0, new_id[np.maximum(self.left[:end][keep], 0)], -1)
        right = np.where(feature >= 0, new_id[np.maximum(self.right[:end][keep], 0)], -1)
        return ForestModel(feature=feature, split=split, left=left, right=right,
                           value=self.value[:end][keep], depth=self.depth[:end][keep],
                           roots=new_id[self.roots[:n_trees]], n_trees=int(n_trees),
                           max_depth=int(max_depth), n_features=self.n_features, seed=self.seed)

    def predict_score(self, X):
        """Fraction of trees voting ASD."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"model expects {self.n_features} features, got shape {X.shape}")
        if X.shape[0] == 0:
            return np.zeros(0)
        votes = _vote(np.ascontiguousarray(X), self.feature, self.split, self.left, self.right,
                      self.value, self.roots)
        return votes / self.n_trees


@njit(cache=True, nogil=True)
def _vote(X, feature, split, left, right, value, roots):
    n = X.shape[0]
    out = np.zeros(n)
    for r in range(roots.shape[0]):
        for s in range(n):
            node = roots[r]
            while feature[node] >= 0:
                if X[s, feature[node]] <= split[node]:
                    node = left[node]
                else:
                    node = right[node]
            if value[node] > 0.5:
                out[s] += 1.0
    return out


@njit(cache=True, nogil=True)
def _grow_tree(X, y, max_depth, n_candidates, seed):
    np.random.seed(seed)
    n, d = X.shape
    counts = np.zeros(n)
    for _ in range(n):
        counts[np.random.randint(n)] += 1.0
    n_rows = 0
    for i in range(n):
        if counts[i] > 0:
            n_rows += 1
    samples = np.empty(n_rows, dtype=np.int64)
    k = 0
    for i in range(n):
        if counts[i] > 0:
            samples[k] = i
            k += 1
    cap = 2 * n_rows + 1
    feature = -np.ones(cap, dtype=np.int64)
    split = np.zeros(cap)
    left = -np.ones(cap, dtype=np.int64)
    right = -np.ones(cap, dtype=np.int64)
    value = np.zeros(cap)
    depth = np.zeros(cap, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    stop = np.zeros(cap, dtype=np.int64)
    start[0] = 0
    stop[0] = n_rows
    n_nodes = 1
    perm = np.arange(d)
    vals = np.empty(n_rows)
    buf = np.empty(n_rows, dtype=np.int64)

    node = 0
    while node < n_nodes:
        a = start[node]
        b = stop[node]
        w0 = 0.0
        w1 = 0.0
        for t in range(a, b):
            s = samples[t]
            if y[s] > 0:
                w1 += counts[s]
            else:
                w0 += counts[s]
        wt = w0 + w1
        value[node] = w1 / wt
        if depth[node] >= max_depth or b - a < 2 or w0 == 0.0 or w1 == 0.0:
            node += 1
            continue

        # partial Fisher-Yates: first n_candidates entries of perm
        for c in range(n_candidates):
            r = c + np.random.randint(d - c)
            tmp = perm[c]
            perm[c] = perm[r]
            perm[r] = tmp

        best_score = np.inf
        best_f = -1
        best_thr = 0.0
        m = b - a
        for c in range(n_candidates):
            f = perm[c]
            for t in range(m):
                vals[t] = X[samples[a + t], f]
            order = np.argsort(vals[:m], kind="mergesort")
            l0 = 0.0
            l1 = 0.0
            for t in range(m - 1):
                s = samples[a + order[t]]
                if y[s] > 0:
                    l1 += counts[s]
                else:
                    l0 += counts[s]
                lo = vals[order[t]]
                hi = vals[order[t + 1]]
                if lo >= hi:
                    continue
                wl = l0 + l1
                wr = wt - wl
                r0 = w0 - l0
                r1 = w1 - l1
                # weighted child impurity: wl*gini_l + wr*gini_r
                score = wl - (l0 * l0 + l1 * l1) / wl + wr - (r0 * r0 + r1 * r1) / wr
                if score < best_score:
                    best_score = score
                    best_f = f
                    thr = 0.5 * (lo + hi)
                    if thr >= hi:
                        thr = lo
                    best_thr = thr
        if best_f < 0:
            node += 1
            continue

        # partition samples[a:b] into <= thr | > thr, keeping relative order
        nl = 0
        for t in range(a, b):
            if X[samples[t], best_f] <= best_thr:
                buf[nl] = samples[t]
                nl += 1
        nr = nl
        for t in range(a, b):
            if X[samples[t], best_f] > best_thr:
                buf[nr] = samples[t]
                nr += 1
        for t in range(m):
            samples[a + t] = buf[t]

        feature[node] = best_f
        split[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        start[n_nodes] = a
        stop[n_nodes] = a + nl
        start[n_nodes + 1] = a + nl
        stop[n_nodes + 1] = b
        depth[n_nodes] = depth[node] + 1
        depth[n_nodes + 1] = depth[node] + 1
        n_nodes += 2
        node += 1
    return (feature[:n_nodes], split[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], depth[:n_nodes])


def n_split_candidates(n_features):
    return max(1, math.ceil(math.sqrt(n_features)))


def tree_seeds(seed, n_trees):
    """Seed for each tree; tree ``t`` gets the same seed whatever ``n_trees`` is."""
    return np.random.SeedSequence(int(seed)).generate_state(n_trees, dtype=np.uint32)


def rf_fit(X, y, n_trees=100, max_depth=5, seed=0):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = (np.asarray(y) > 0).astype(np.int64)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise ShapeError(f"X shape {X.shape} does not match {len(y)} labels")
    if max_depth < 1:
        raise ConfigError(f"max_depth must be >= 1, got {max_depth}")
    if n_trees < 1:
        raise ConfigError(f"n_trees must be >= 1, got {n_trees}")
    if len(np.unique(y)) < 2:
        raise ConfigError("forest training needs both classes present")
    n, d = X.shape
    n_cand = n_split_candidates(d)
    parts = []
    roots = np.zeros(n_trees, dtype=np.int64)
    offset = 0
    for t, tree_seed in enumerate(tree_seeds(seed, n_trees)):
        f, s, l, r, v, dep = _grow_tree(X, y, int(max_depth), n_cand, int(tree_seed))
        roots[t] = offset
        l = np.where(l >= 0, l + offset, -1)
        r = np.where(r >= 0, r + offset, -1)
        parts.append((f, s, l, r, v, dep))
        offset += len(f)
    cols = [np.concatenate(c) for c in zip(*parts)]
    return ForestModel(*cols, roots=roots, n_trees=int(n_trees), max_depth=int(max_depth),
                       n_features=d, seed=int(seed))
