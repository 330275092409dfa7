"""Stratified cross-validation, model selection and hyperparameter tuning."""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass

import numpy as np

from ..errors import EmptyGrid, TooFewPerClass
from ..rng import substream
from . import estimator as est

DEFAULT_GRIDS = {
    "logistic-regression": {"l2": [0.01, 0.1, 1.0]},
    "decision-tree": {"max_depth": [3, 5, 8]},
    "random-forest": {"n_estimators": [100, 200], "max_depth": [5, 8]},
    "gradient-boosting": {"learning_rate": [0.05, 0.1], "max_depth": [3, 5], "n_estimators": [100, 200]},
}

# families whose n_estimators prefix can be read off a larger fit
_PREFIX_FAMILIES = ("random-forest", "gradient-boosting")


def expand_grid(grid: dict) -> list[dict]:
    """All combinations, keys in insertion order, last key varying fastest."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise EmptyGrid("hyperparameter grid is empty")
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def stratified_folds(y, folds: int, seed: int) -> np.ndarray:
    """Fold id per row. Each class is shuffled and dealt round-robin."""
    if folds < 2:
        raise ValueError("folds must be >= 2")
    y = np.asarray(y)
    out = np.empty(len(y), dtype=np.int64)
    rng = substream(seed, "folds")
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        if len(idx) < folds:
            raise TooFewPerClass(f"class {cls} has {len(idx)} rows, fewer than {folds} folds")
        perm = idx[rng.permutation(len(idx))]
        out[perm] = np.arange(len(perm)) % folds
    return out


def _data_key(X: np.ndarray, y: np.ndarray, folds: int, seed: int) -> str:
    h = hashlib.sha1()
    h.update(np.ascontiguousarray(X, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(y, dtype=np.float64).tobytes())
    h.update(f"{X.shape}|{folds}|{seed}".encode())
    return h.hexdigest()


def _combo_key(family: str, combo: dict) -> tuple:
    return (family, tuple(sorted(combo.items())))


def cv_accuracies(family: str, combos: list[dict], X, y, folds: int = 5, seed: int = 0,
                  cache: dict | None = None) -> list[float]:
    """Mean stratified-CV accuracy for each combo, in order.

    Forest and boosting combos that differ only in ``n_estimators`` share one fit
    per fold; the smaller ensembles are read off as tree prefixes, which is exact
    because tree ``t`` never depends on trees after it.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    fold_of = stratified_folds(y, folds, seed)
    resolved = [est.resolve_hyperparams(family, c) for c in combos]
    dkey = _data_key(X, y, folds, seed)
    cache = {} if cache is None else cache
    results: dict[int, float] = {}
    pending: dict[tuple, list[int]] = {}
    for i, hp in enumerate(resolved):
        key = (dkey, _combo_key(family, hp))
        if key in cache:
            results[i] = cache[key]
            continue
        if family in _PREFIX_FAMILIES:
            group = tuple(sorted((k, v) for k, v in hp.items() if k != "n_estimators"))
        else:
            group = ("single", i)
        pending.setdefault(group, []).append(i)

    for members in pending.values():
        sizes = [resolved[i].get("n_estimators") for i in members]
        big = resolved[members[int(np.argmax(sizes))]] if sizes[0] is not None else resolved[members[0]]
        correct = {i: 0 for i in members}
        for f in range(folds):
            tr, te = fold_of != f, fold_of == f
            model = est.fit(family, big, X[tr], y[tr], seed)
            for i in members:
                pred = model.predict(X[te], n_trees=resolved[i].get("n_estimators"))
                correct[i] += float(np.mean(pred == y[te]))
        for i in members:
            acc = correct[i] / folds
            results[i] = acc
            cache[(dkey, _combo_key(family, resolved[i]))] = acc
    return [results[i] for i in range(len(combos))]


@dataclass
class SelectionResult:
    family: str
    hyperparams: dict
    cv_table: list  # rows of {family, hyperparams, cv_accuracy}
    rationale: str


def grid_search_select(candidates, X, y, folds: int = 5, seed: int = 0,
                       cache: dict | None = None) -> SelectionResult:
    """Pick the (family, combo) with the highest mean CV accuracy.

    Ties go to the earlier family, then the earlier combo.
    """
    if not candidates:
        raise EmptyGrid("no candidate families")
    table = []
    best = None
    for family, grid in candidates:
        combos = expand_grid(grid)
        scores = cv_accuracies(family, combos, X, y, folds, seed, cache)
        for combo, score in zip(combos, scores):
            row = {"family": family, "hyperparams": est.resolve_hyperparams(family, combo), "cv_accuracy": score}
            table.append(row)
            if best is None or score > best["cv_accuracy"]:
                best = row
    ranked = sorted(table, key=lambda r: -r["cv_accuracy"])
    runner = next((r for r in ranked if r["family"] != best["family"]), None)
    rationale = (
        f"{best['family']} with {_fmt_hp(best['hyperparams'])} reached the highest mean "
        f"{folds}-fold cross-validated accuracy ({best['cv_accuracy']:.4f})"
    )
    if runner is not None:
        rationale += f"; the best alternative family, {runner['family']}, reached {runner['cv_accuracy']:.4f}"
    return SelectionResult(best["family"], dict(best["hyperparams"]), table, rationale + ".")


def tune_hyperparameters(family: str, grid: dict, X, y, folds: int = 5, seed: int = 0,
                         cache: dict | None = None) -> dict:
    return grid_search_select([(family, grid)], X, y, folds, seed, cache).hyperparams


def _fmt_hp(hp: dict) -> str:
    return ", ".join(f"{k}={v}" for k, v in hp.items())


def write_hyperparams(hp: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in hp.items():
            fh.write(f"{k}={v!r}\n")


def read_hyperparams(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            v = v.strip()
            try:
                out[k.strip()] = int(v)
            except ValueError:
                out[k.strip()] = float(v)
    return out
