"""Feature importance dispatch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import MethodUnsupported
from ..rng import substream
from .estimator import Estimator
from .trees import split_importance

METHODS = ("coefficients", "impurity", "permutation", "log-probability")
PERMUTATION_REPEATS = 10


@dataclass(frozen=True)
class ImportanceReport:
    method: str
    scores: dict  # feature -> score

    def top_k(self, k: int | None = None) -> list[tuple[str, float]]:
        """Descending by score; ties keep feature order."""
        items = sorted(self.scores.items(), key=lambda kv: -kv[1])
        return items if k is None else items[:k]

    def to_dict(self) -> dict:
        return {"method": self.method, "scores": dict(self.scores),
                "ranking": [[n, v] for n, v in self.top_k()]}


def default_method(family: str) -> str:
    return "coefficients" if family == "logistic-regression" else "impurity"


def permutation_importance(model: Estimator, X, y, seed: int = 0, repeats: int = PERMUTATION_REPEATS) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    base = float(np.mean(model.predict(X) == y))
    out = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        rng = substream(seed, "permimp", j)
        drops = 0.0
        for _ in range(repeats):
            Xp = X.copy()
            Xp[:, j] = Xp[rng.permutation(len(X)), j]
            drops += base - float(np.mean(model.predict(Xp) == y))
        out[j] = drops / repeats
    return out


def feature_importance(model: Estimator, method: str | None = None, X_test=None, y_test=None,
                       seed: int = 0) -> ImportanceReport:
    method = method or default_method(model.family)
    if method not in METHODS:
        raise MethodUnsupported(f"unknown importance method {method!r}")
    if method == "log-probability":
        raise MethodUnsupported("log-probability importance needs a naive Bayes model, which is not provided")
    if method == "coefficients":
        if model.family != "logistic-regression":
            raise MethodUnsupported(f"{model.family} has no coefficients")
        values = np.abs(model.params["weights"][:-1])
    elif method == "impurity":
        if model.family == "logistic-regression":
            raise MethodUnsupported("logistic regression has no impurity importance")
        values = split_importance(model.params["trees"], model.n_features)
    else:
        if X_test is None or y_test is None:
            raise ValueError("permutation importance needs X_test and y_test")
        values = permutation_importance(model, X_test, y_test, seed)
    return ImportanceReport(method, {name: float(v) for name, v in zip(model.feature_names, values)})
