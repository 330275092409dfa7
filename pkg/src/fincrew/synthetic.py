"""Synthetic credit-like dataset for hermetic runs."""

from __future__ import annotations

import numpy as np

from .errors import BadImbalance
from .rng import substream
from .tabular import Table

TARGET = "default"
_ALPHABETS = ("ABC", "PQRS", "XYZ", "KLMN")

# substream indices within "synth"
_W, _X, _Y, _CAT, _MISSING = range(5)


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def signal_weights(n_numeric: int, seed: int) -> np.ndarray:
    """Unit-norm direction along which the log-odds of the positive class grow."""
    w = substream(seed, "synth", _W).normal(size=n_numeric)
    norm = np.linalg.norm(w)
    return w / norm if norm > 0 else w


def informative_features(n_numeric: int, seed: int, k: int = 3) -> list[str]:
    w = signal_weights(n_numeric, seed)
    order = np.argsort(-np.abs(w), kind="stable")[:k]
    return [f"x{i + 1}" for i in order]


def _intercept(z: np.ndarray, rate: float) -> float:
    lo, hi = -50.0, 50.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _sigmoid(z + mid).mean() < rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate_synthetic_dataset(n_rows: int = 5000, n_numeric: int = 6, n_categorical: int = 2,
                               imbalance: float = 0.78, signal_strength: float = 2.0, seed: int = 0,
                               missing_rate: float = 0.0) -> Table:
    """Binary-target table whose majority class (0) makes up ``imbalance`` of the rows.

    Numeric features are standard normal. The positive class has log-odds
    ``signal_strength * w.x + b``, with ``b`` solved so the expected positive
    rate is ``1 - imbalance``. Label draws are repeated until the realised
    majority share is within 0.01 of the target. Categorical columns use
    class-dependent letter frequencies. ``missing_rate`` blanks cells in the
    first two numeric columns.
    """
    if not 0.5 < imbalance < 1.0:
        raise BadImbalance(f"imbalance must lie in (0.5, 1), got {imbalance}")
    if n_rows < 100:
        raise ValueError("n_rows must be >= 100")
    w = signal_weights(n_numeric, seed)
    X = substream(seed, "synth", _X).standard_normal((n_rows, n_numeric))
    z = signal_strength * (X @ w)
    rate = 1.0 - imbalance
    p = _sigmoid(z + _intercept(z, rate))

    rng = substream(seed, "synth", _Y)
    y = None
    for _ in range(1000):
        cand = (rng.random(n_rows) < p).astype(np.int64)
        if abs((1.0 - cand.mean()) - imbalance) <= 0.01:
            y = cand
            break
    if y is None:
        # fall back to an exact count, drawn in proportion to p
        n_pos = int(round(rate * n_rows))
        y = np.zeros(n_rows, dtype=np.int64)
        y[rng.choice(n_rows, size=n_pos, replace=False, p=p / p.sum())] = 1

    cols: dict = {}
    for j in range(n_numeric):
        cols[f"x{j + 1}"] = X[:, j].copy()
    crng = substream(seed, "synth", _CAT)
    for j in range(n_categorical):
        letters = _ALPHABETS[j % len(_ALPHABETS)]
        base = crng.normal(size=len(letters))
        shift = crng.normal(scale=0.5, size=len(letters)) * signal_strength
        probs = []
        for cls in (0, 1):
            logits = base + cls * shift
            e = np.exp(logits - logits.max())
            probs.append(e / e.sum())
        u = crng.random(n_rows)
        codes = np.where(y == 1,
                         np.searchsorted(np.cumsum(probs[1]), u, side="right"),
                         np.searchsorted(np.cumsum(probs[0]), u, side="right"))
        codes = np.minimum(codes, len(letters) - 1)
        cols[f"cat{j + 1}"] = np.array([letters[c] for c in codes], dtype=object)
    if missing_rate > 0:
        mrng = substream(seed, "synth", _MISSING)
        for j in range(min(2, n_numeric)):
            col = cols[f"x{j + 1}"]
            col[mrng.random(n_rows) < missing_rate] = np.nan
    cols[TARGET] = y.astype(np.float64)
    return Table.from_columns(cols)
