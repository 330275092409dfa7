"""Level-wise histogram tree builder shared by the decision tree, the random
forest and gradient boosting.

Each feature is discretised once per fit into at most ``MAX_BINS`` bins whose
edges are midpoints between consecutive distinct training values. With fewer
distinct values than bins the candidate thresholds are exactly those of an
exhaustive greedy search. All nodes of one depth are grown together with a
single ``bincount`` per statistic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..rng import substream

MAX_BINS = 256
# splits must beat rounding noise, measured relative to the node weight
MIN_GAIN = 1e-10


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray  # impurity decrease achieved by each split node

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) if len(depth) else 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        n = len(X)
        node = np.zeros(n, dtype=np.intp)
        rows = np.arange(n)
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                return node
            x = X[rows, np.where(internal, f, 0)]
            nxt = np.where(x <= self.threshold[node], self.left[node], self.right[node])
            node = np.where(internal, nxt, node)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "gain": self.gain.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.intp),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.intp),
            np.asarray(d["right"], dtype=np.intp),
            np.asarray(d["value"], dtype=np.float64),
            np.asarray(d["gain"], dtype=np.float64),
        )


class Binner:
    def __init__(self, X: np.ndarray, max_bins: int = MAX_BINS):
        self.cuts = []
        n, p = X.shape
        codes = np.empty((n, p), dtype=np.int32)
        for j in range(p):
            x = X[:, j]
            u = np.unique(x)
            if len(u) <= max_bins:
                cuts = (u[:-1] + u[1:]) / 2.0
            else:
                q = np.quantile(x, np.linspace(0, 1, max_bins + 1)[1:-1])
                pos = np.unique(np.searchsorted(u, q))
                pos = pos[pos < len(u) - 1]
                cuts = (u[pos] + u[pos + 1]) / 2.0
            self.cuts.append(cuts)
            codes[:, j] = np.searchsorted(cuts, x, side="left")
        self.codes = codes
        self.n_bins = max(1, max((len(c) + 1 for c in self.cuts), default=1))


@njit(cache=True)
def _histograms(codes, rows, node_local, chosen, w, s, A, B):
    m = chosen.shape[1]
    h0 = np.zeros((A, m, B))
    h1 = np.zeros((A, m, B))
    for i in range(rows.shape[0]):
        r = rows[i]
        a = node_local[r]
        for k in range(m):
            b = codes[r, chosen[a, k]]
            h0[a, k, b] += w[r]
            h1[a, k, b] += s[r]
    return h0, h1


@njit(cache=True)
def _best_splits(h0, h1, gini):
    """Scan every (node, candidate feature, bin boundary); first maximum wins."""
    A, m, B = h0.shape
    best_gain = np.full(A, -np.inf)
    best_k = np.full(A, -1, dtype=np.intp)
    best_b = np.zeros(A, dtype=np.intp)
    bl0 = np.zeros(A)
    bl1 = np.zeros(A)
    T0 = np.zeros(A)
    T1 = np.zeros(A)
    for a in range(A):
        t0 = 0.0
        t1 = 0.0
        for b in range(B):
            t0 += h0[a, 0, b]
            t1 += h1[a, 0, b]
        T0[a] = t0
        T1[a] = t1
        if t0 <= 0.0:
            continue
        if gini:
            parent = 2.0 * t1 * (t0 - t1) / t0
        else:
            parent = t1 * t1 / t0
        for k in range(m):
            l0 = 0.0
            l1 = 0.0
            for b in range(B - 1):
                l0 += h0[a, k, b]
                l1 += h1[a, k, b]
                r0 = t0 - l0
                if l0 <= 0.0 or r0 <= 0.0:
                    continue
                r1 = t1 - l1
                if gini:
                    g = parent - 2.0 * l1 * (l0 - l1) / l0 - 2.0 * r1 * (r0 - r1) / r0
                else:
                    g = l1 * l1 / l0 + r1 * r1 / r0 - parent
                if g > best_gain[a]:
                    best_gain[a] = g
                    best_k[a] = k
                    best_b[a] = b
                    bl0[a] = l0
                    bl1[a] = l1
    return best_gain, best_k, best_b, bl0, bl1, T0, T1


def grow_tree(
    binner: Binner,
    stats: np.ndarray,
    criterion: str,
    max_depth: int,
    feature_sampler=None,
) -> tuple[Tree, np.ndarray]:
    """Grow one tree and return it with the leaf index of every training row.

    ``stats`` has shape (n, 2). For ``"gini"`` the columns are (weight,
    weight * y); for ``"mse"`` they are (count, residual). Rows with zero
    weight take no part in the fit. Leaf values are the weighted class-1
    fraction for gini and the residual mean for mse; boosting overwrites them.
    """
    codes = binner.codes
    n, p = codes.shape
    if p == 0:
        max_depth = 0
    B = binner.n_bins

    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    gain = [0.0]
    w0 = stats[:, 0].sum()
    value = [stats[:, 1].sum() / w0 if w0 > 0 else 0.0]

    node_of = np.zeros(n, dtype=np.intp)
    w_col = np.ascontiguousarray(stats[:, 0])
    s_col = np.ascontiguousarray(stats[:, 1])
    live = w_col > 0
    frontier = [0]
    for depth in range(max_depth):
        if not frontier:
            break
        A = len(frontier)
        local = np.full(len(feature), -1, dtype=np.intp)
        local[frontier] = np.arange(A)
        ln = local[node_of]
        sel = np.flatnonzero(live & (ln >= 0))
        if len(sel) == 0:
            break
        # candidate features per node: all of them, or a random subset
        if feature_sampler is None:
            chosen = np.ascontiguousarray(np.broadcast_to(np.arange(p, dtype=np.intp), (A, p)))
        else:
            chosen = np.ascontiguousarray(feature_sampler(A, p), dtype=np.intp)
        h0, h1 = _histograms(codes, sel, ln, chosen, w_col, s_col, A, B)
        best_gain, best_k, best_b, bl0, bl1, T0, T1 = _best_splits(h0, h1, criterion == "gini")
        best_f = chosen[np.arange(A), best_k]

        split_f = np.full(A, -1, dtype=np.intp)
        split_b = np.zeros(A, dtype=np.intp)
        child_left = np.zeros(A, dtype=np.intp)
        next_frontier = []
        for a, nid in enumerate(frontier):
            if best_k[a] < 0 or best_gain[a] <= MIN_GAIN * max(1.0, T0[a]):
                continue
            f, b = int(best_f[a]), int(best_b[a])
            feature[nid] = f
            threshold[nid] = float(binner.cuts[f][b])
            gain[nid] = float(best_gain[a])
            lid = len(feature)
            for w, s in ((bl0[a], bl1[a]), (T0[a] - bl0[a], T1[a] - bl1[a])):
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                gain.append(0.0)
                value.append(float(s / w))
            left[nid], right[nid] = lid, lid + 1
            split_f[a], split_b[a], child_left[a] = f, b, lid
            next_frontier.extend((lid, lid + 1))
        a_of = ln[sel]
        moving = split_f[a_of] >= 0
        rows, a_of = sel[moving], a_of[moving]
        go_left = codes[rows, split_f[a_of]] <= split_b[a_of]
        node_of[rows] = child_left[a_of] + np.where(go_left, 0, 1)
        frontier = next_frontier if depth + 1 < max_depth else []

    tree = Tree(
        np.asarray(feature, dtype=np.intp),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.intp),
        np.asarray(right, dtype=np.intp),
        np.asarray(value, dtype=np.float64),
        np.asarray(gain, dtype=np.float64),
    )
    return tree, node_of


def split_importance(trees: list[Tree], n_features: int) -> np.ndarray:
    """Total split gain per feature, normalised to sum to one (all zero if no splits)."""
    total = np.zeros(n_features)
    for t in trees:
        internal = t.feature >= 0
        np.add.at(total, t.feature[internal], t.gain[internal])
    s = total.sum()
    return total / s if s > 0 else total


# --- estimators ------------------------------------------------------------


def fit_decision_tree(X, y, max_depth):
    binner = Binner(X)
    stats = np.column_stack([np.ones(len(y)), y.astype(np.float64)])
    tree, _ = grow_tree(binner, stats, "gini", max_depth)
    return [tree]


def fit_random_forest(X, y, n_estimators, max_depth, seed):
    binner = Binner(X)
    n, p = X.shape
    mtry = max(1, int(np.sqrt(p)))
    trees = []
    yf = y.astype(np.float64)
    for t in range(n_estimators):
        rng = substream(seed, "forest", t)
        weights = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)

        def sampler(A, p, rng=rng):
            keys = rng.random((A, p))
            chosen = np.argsort(keys, axis=1)[:, :mtry]
            return np.sort(chosen, axis=1)

        stats = np.column_stack([weights, weights * yf])
        tree, _ = grow_tree(binner, stats, "gini", max_depth, feature_sampler=sampler)
        trees.append(tree)
    return trees


def _logloss(F, y):
    return np.logaddexp(0.0, F) - y * F


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def prior_logodds(y) -> float:
    p = float(np.clip(np.mean(y), 1e-15, 1 - 1e-15))
    return float(np.log(p / (1 - p)))


def fit_gradient_boosting(X, y, n_estimators, learning_rate, max_depth, loss_trace=None):
    """Logistic-loss boosting with Newton leaf values and shrinkage.

    Each leaf step is halved until that leaf's training loss does not rise,
    which keeps the total training loss non-increasing across stages.
    """
    yf = y.astype(np.float64)
    f0 = prior_logodds(yf)
    F = np.full(len(yf), f0)
    binner = Binner(X) if n_estimators > 0 else None
    trees = []
    if loss_trace is not None:
        loss_trace.append(float(_logloss(F, yf).sum()))
    for _ in range(n_estimators):
        prob = sigmoid(F)
        resid = yf - prob
        hess = prob * (1.0 - prob)
        stats = np.column_stack([np.ones(len(yf)), resid])
        tree, leaf = grow_tree(binner, stats, "mse", max_depth)
        m = len(tree.feature)
        G = np.bincount(leaf, resid, minlength=m)
        H = np.bincount(leaf, hess, minlength=m)
        step = learning_rate * G / np.maximum(H, 1e-12)
        old = np.bincount(leaf, _logloss(F, yf), minlength=m)
        for _ in range(60):
            new = np.bincount(leaf, _logloss(F + step[leaf], yf), minlength=m)
            bad = new > old
            if not bad.any():
                break
            step[bad] *= 0.5
        else:
            step[bad] = 0.0
        is_leaf = tree.feature < 0
        tree.value = np.where(is_leaf, step, 0.0)
        F = F + step[leaf]
        trees.append(tree)
        if loss_trace is not None:
            loss_trace.append(float(_logloss(F, yf).sum()))
    return f0, trees
