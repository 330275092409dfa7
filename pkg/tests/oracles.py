"""Brute-force reference implementations used by the tests.

These are deliberately slow and literal; they share no code with the package
beyond its public entry points (estimators, fold assignment).
"""

import itertools

import numpy as np


def confusion_oracle(y_true, y_pred):
    tp = fp = tn = fn = 0
    for t, p in zip(y_true, y_pred):
        if t == 1 and p == 1:
            tp += 1
        elif t == 0 and p == 1:
            fp += 1
        elif t == 0 and p == 0:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


def auc_oracle(y_true, scores):
    """Probability a random positive outscores a random negative, ties count half."""
    pos = [s for s, t in zip(scores, y_true) if t == 1]
    neg = [s for s, t in zip(scores, y_true) if t == 0]
    wins = 0.0
    for p, q in itertools.product(pos, neg):
        if p > q:
            wins += 1.0
        elif p == q:
            wins += 0.5
    return wins / (len(pos) * len(neg))


def balanced_accuracy_oracle(y_true, y_pred):
    tp, fp, tn, fn = confusion_oracle(y_true, y_pred)
    return 0.5 * (tp / (tp + fn) + tn / (tn + fp))


def knn_impute_oracle(train_cols, query_cols, names, k):
    """Fill NaNs in ``query_cols`` from the k nearest complete ``train_cols`` rows.

    Distances: Euclidean over the columns the query row has observed, after
    standardising with the mean and population std of the complete train rows.
    Ties go to the lower train row index. Returns a dict of filled columns.
    """
    train = np.column_stack([train_cols[c] for c in names])
    query = np.column_stack([query_cols[c] for c in names])
    complete = [i for i in range(len(train)) if not np.isnan(train[i]).any()]
    ref = train[complete]
    center = ref.mean(axis=0)
    scale = ref.std(axis=0)
    scale[scale == 0] = 1.0
    out = query.copy()
    for r in range(len(query)):
        missing = [j for j in range(len(names)) if np.isnan(query[r, j])]
        if not missing:
            continue
        observed = [j for j in range(len(names)) if j not in missing]
        dists = []
        for i in range(len(ref)):
            d = 0.0
            for j in observed:
                diff = (ref[i, j] - center[j]) / scale[j] - (query[r, j] - center[j]) / scale[j]
                d += diff * diff
            dists.append((d, i))
        nearest = [i for _, i in sorted(dists)[:k]]
        for j in missing:
            if not observed:
                out[r, j] = center[j]
                continue
            total = 0.0
            for i in nearest:
                total += ref[i, j]
            out[r, j] = total / k
    return {c: out[:, j] for j, c in enumerate(names)}


def cv_enumeration_oracle(candidates, X, y, folds, seed):
    """Exhaustive grid search: every (family, combo) refitted from scratch on every fold."""
    from fincrew.models import estimator as est
    from fincrew.models.selection import stratified_folds

    fold_of = stratified_folds(y, folds, seed)
    best, table = None, []
    for family, grid in candidates:
        keys = list(grid)
        for values in itertools.product(*(grid[k] for k in keys)):
            combo = dict(zip(keys, values))
            accs = []
            for f in range(folds):
                tr, te = fold_of != f, fold_of == f
                model = est.fit(family, combo, X[tr], y[tr], seed)
                accs.append(float(np.mean(model.predict(X[te]) == y[te])))
            score = sum(accs) / folds
            table.append((family, combo, score))
            if best is None or score > best[2]:
                best = (family, combo, score)
    return best, table


def central_difference(f, w, h=1e-6):
    g = np.zeros_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def convex_pair(point, rows, tol=1e-9):
    """Find (a, b, lam) with point = rows[a] + lam * (rows[b] - rows[a]), lam in [0, 1]."""
    for a in range(len(rows)):
        for b in range(len(rows)):
            d = rows[b] - rows[a]
            moving = np.abs(d) > tol
            if not moving.any():
                if np.allclose(point, rows[a], atol=tol, rtol=0):
                    return a, b, 0.0
                continue
            lams = (point[moving] - rows[a][moving]) / d[moving]
            lam = lams[0]
            if np.all(np.abs(lams - lam) <= tol) and -tol <= lam <= 1 + tol:
                if np.allclose(point[~moving], rows[a][~moving], atol=tol, rtol=0):
                    return a, b, float(lam)
    return None
