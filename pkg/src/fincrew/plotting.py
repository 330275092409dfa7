"""Report figures. Everything renders off-screen to PNG files."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_METADATA = {"Software": None}


def _save(fig, path) -> str:
    os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_METADATA)
    plt.close(fig)
    return os.fspath(path)


def plot_metrics(metrics: dict, path, title: str = "Test metrics") -> str:
    names = [k for k in ("accuracy", "precision", "recall", "f1", "auc", "auc_label", "capture_rate")
             if metrics.get(k) is not None]
    vals = [metrics[k] for k in names]
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    bars = ax.bar(names, vals, color="#4c72b0")
    for b, v in zip(bars, vals):
        ax.text(b.get_x() + b.get_width() / 2, v + 0.01, f"{v:.3f}", ha="center", va="bottom", fontsize=8)
    ax.set_ylim(0, 1.1)
    ax.set_title(title)
    ax.tick_params(axis="x", labelrotation=30)
    return _save(fig, path)


def plot_confusion(confusion: dict, path) -> str:
    m = np.array([[confusion["tn"], confusion["fp"]], [confusion["fn"], confusion["tp"]]])
    fig, ax = plt.subplots(figsize=(3.6, 3.2))
    ax.imshow(m, cmap="Blues")
    for (i, j), v in np.ndenumerate(m):
        ax.text(j, i, str(v), ha="center", va="center",
                color="white" if v > m.max() / 2 else "black")
    ax.set_xticks([0, 1], ["pred 0", "pred 1"])
    ax.set_yticks([0, 1], ["true 0", "true 1"])
    ax.set_title("Confusion matrix")
    return _save(fig, path)


def plot_importance(scores: dict, path, method: str = "", k: int = 10) -> str:
    items = sorted(scores.items(), key=lambda kv: -kv[1])[:k][::-1]
    fig, ax = plt.subplots(figsize=(6.0, 0.35 * max(len(items), 3) + 1.0))
    ax.barh([n for n, _ in items], [v for _, v in items], color="#55a868")
    ax.set_title(f"Feature importance ({method})" if method else "Feature importance")
    return _save(fig, path)


def plot_robustness(variants: dict, path, metrics=("accuracy", "f1", "auc")) -> str:
    """Grouped bars: one group per metric, one bar per input variant."""
    labels = list(variants)
    x = np.arange(len(metrics))
    width = 0.8 / max(len(labels), 1)
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    for i, name in enumerate(labels):
        vals = [variants[name].get(m) or 0.0 for m in metrics]
        ax.bar(x + i * width - 0.4 + width / 2, vals, width, label=name)
    ax.set_xticks(x, metrics)
    ax.set_ylim(0, 1.1)
    ax.legend(fontsize=8)
    ax.set_title("Outcome analysis")
    return _save(fig, path)


def plot_cv_table(cv_table: list, path) -> str:
    labels = [f"{r['family']}\n" + ",".join(f"{k}={v}" for k, v in r["hyperparams"].items()) for r in cv_table]
    vals = [r["cv_accuracy"] for r in cv_table]
    fig, ax = plt.subplots(figsize=(6.4, 0.32 * len(labels) + 1.2))
    ax.barh(range(len(vals)), vals, color="#8172b2")
    ax.set_yticks(range(len(vals)), labels, fontsize=6)
    ax.set_xlim(min(vals) - 0.02 if vals else 0, 1.0)
    ax.invert_yaxis()
    ax.set_title("Cross-validated accuracy")
    return _save(fig, path)
