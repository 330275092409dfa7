"""Estimator facade: fitting, scoring and the versioned JSON artifact."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import (
    ArityMismatch,
    CorruptArtifact,
    FileMissing,
    MissingValuesPresent,
    NonBinaryTarget,
    UnknownHyperparam,
    VersionMismatch,
)
from . import linear, trees

FAMILIES = ("logistic-regression", "decision-tree", "random-forest", "gradient-boosting")
TREE_FAMILIES = ("decision-tree", "random-forest", "gradient-boosting")

# name -> (type, minimum, default)
HYPERPARAMS = {
    "logistic-regression": {"l2": (float, 0.0, 1.0)},
    "decision-tree": {"max_depth": (int, 1, 5)},
    "random-forest": {"n_estimators": (int, 1, 100), "max_depth": (int, 1, 8)},
    "gradient-boosting": {
        "learning_rate": (float, 0.0, 0.1),
        "max_depth": (int, 1, 3),
        "n_estimators": (int, 0, 100),
    },
}

FORMAT = "fincrew-model"
FORMAT_VERSION = 1
THRESHOLD = 0.5


def check_family(family: str) -> str:
    if family not in FAMILIES:
        raise ValueError(f"unknown model family {family!r}; expected one of {FAMILIES}")
    return family


def resolve_hyperparams(family: str, hyperparams: dict | None) -> dict:
    spec = HYPERPARAMS[check_family(family)]
    hyperparams = dict(hyperparams or {})
    unknown = set(hyperparams) - set(spec)
    if unknown:
        raise UnknownHyperparam(f"{family} does not accept {sorted(unknown)}")
    out = {}
    for name, (kind, minimum, default) in spec.items():
        value = hyperparams.get(name, default)
        if kind is int:
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise ValueError(f"{name} must be an integer, got {value!r}")
            value = int(value)
        else:
            value = float(value)
        if value < minimum:
            raise ValueError(f"{name} must be >= {minimum}, got {value}")
        out[name] = value
    return out


@dataclass
class Estimator:
    family: str
    hyperparams: dict
    feature_names: tuple
    seed: int
    params: dict = field(repr=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ArityMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def decision_function(self, X, n_trees: int | None = None) -> np.ndarray:
        """Raw logit (LR, GBT) or class-1 probability (tree, forest)."""
        X = self._check(X)
        p = self.params
        if self.family == "logistic-regression":
            Xs = (X - p["mean"]) / p["scale"]
            return Xs @ p["weights"][:-1] + p["weights"][-1]
        forest = p["trees"] if n_trees is None else p["trees"][:n_trees]
        if self.family == "gradient-boosting":
            raw = np.full(len(X), p["init"])
            for t in forest:
                raw = raw + t.predict(X)
            return raw
        total = np.zeros(len(X))
        for t in forest:
            total = total + t.predict(X)
        return total / len(forest)

    def predict_scores(self, X, n_trees: int | None = None) -> np.ndarray:
        raw = self.decision_function(X, n_trees)
        if self.family in ("logistic-regression", "gradient-boosting"):
            return trees.sigmoid(raw)
        return raw

    def predict(self, X, n_trees: int | None = None) -> np.ndarray:
        return (self.predict_scores(X, n_trees) >= THRESHOLD).astype(int)

    # serialisation ---------------------------------------------------------

    def to_dict(self) -> dict:
        p = self.params
        if self.family == "logistic-regression":
            params = {k: np.asarray(p[k]).tolist() for k in ("mean", "scale", "weights")}
        else:
            params = {"trees": [t.to_dict() for t in p["trees"]]}
            if self.family == "gradient-boosting":
                params["init"] = p["init"]
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "family": self.family,
            "hyperparams": self.hyperparams,
            "feature_names": list(self.feature_names),
            "seed": self.seed,
            "params": params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Estimator":
        try:
            if d.get("format") != FORMAT:
                raise CorruptArtifact("not a fincrew model artifact")
            version = d["version"]
            if not isinstance(version, int) or version > FORMAT_VERSION:
                raise VersionMismatch(f"artifact version {version!r} is newer than supported {FORMAT_VERSION}")
            family = d["family"]
            hyper = resolve_hyperparams(family, d["hyperparams"])
            names = tuple(d["feature_names"])
            if not names:
                raise CorruptArtifact("artifact declares no features")
            raw = d["params"]
            if family == "logistic-regression":
                params = {k: np.asarray(raw[k], dtype=np.float64) for k in ("mean", "scale", "weights")}
                if len(params["weights"]) != len(names) + 1:
                    raise CorruptArtifact("weight vector does not match feature count")
            else:
                params = {"trees": [trees.Tree.from_dict(t) for t in raw["trees"]]}
                if family == "gradient-boosting":
                    params["init"] = float(raw["init"])
            return cls(family, hyper, names, int(d["seed"]), params)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, (VersionMismatch, CorruptArtifact)):
                raise
            raise CorruptArtifact(f"malformed model artifact: {exc}") from exc


def fit(family: str, hyperparams: dict | None, X, y, seed: int = 0,
        feature_names: Sequence[str] | None = None, loss_trace: list | None = None) -> Estimator:
    hyper = resolve_hyperparams(family, hyperparams)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per label")
    if np.isnan(X).any():
        raise MissingValuesPresent("X contains missing values")
    yf = np.asarray(y, dtype=np.float64)
    if np.isnan(yf).any() or not np.isin(yf, (0.0, 1.0)).all():
        raise NonBinaryTarget("labels must be 0/1")
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise ArityMismatch("feature_names does not match X")
    if family == "logistic-regression":
        mean, scale, w = linear.fit_logistic(X, yf, hyper["l2"], loss_trace=loss_trace)
        params = {"mean": mean, "scale": scale, "weights": w}
    elif family == "decision-tree":
        params = {"trees": trees.fit_decision_tree(X, yf, hyper["max_depth"])}
    elif family == "random-forest":
        params = {"trees": trees.fit_random_forest(X, yf, hyper["n_estimators"], hyper["max_depth"], seed)}
    else:
        init, forest = trees.fit_gradient_boosting(
            X, yf, hyper["n_estimators"], hyper["learning_rate"], hyper["max_depth"], loss_trace=loss_trace
        )
        params = {"trees": forest, "init": init}
    return Estimator(family, hyper, names, int(seed), params)


def predict(estimator: Estimator, X) -> np.ndarray:
    return estimator.predict(X)


def predict_scores(estimator: Estimator, X) -> np.ndarray:
    return estimator.predict_scores(X)


def save_model(estimator: Estimator, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(estimator.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> Estimator:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileMissing(f"no model artifact at {path}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptArtifact(f"unreadable model artifact: {exc}") from exc
    if not isinstance(d, dict):
        raise CorruptArtifact("model artifact is not an object")
    return Estimator.from_dict(d)
