"""Binary classification metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import NoPositives, SingleClassTruth


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    auc_label: float | None
    capture_rate: float | None
    confusion: tuple  # (tp, fp, tn, fn)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = dict(zip(("tp", "fp", "tn", "fn"), self.confusion))
        return d


def _binary(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1")
    return a.astype(np.int64)


def confusion(y_true, y_pred) -> tuple[int, int, int, int]:
    t = _binary(y_true, "y_true")
    p = _binary(y_pred, "y_pred")
    if len(t) != len(p):
        raise ValueError("y_true and y_pred differ in length")
    tp = int(np.sum((t == 1) & (p == 1)))
    fp = int(np.sum((t == 0) & (p == 1)))
    tn = int(np.sum((t == 0) & (p == 0)))
    fn = int(np.sum((t == 1) & (p == 0)))
    return tp, fp, tn, fn


def roc_auc(y_true, scores) -> float:
    """Mann-Whitney AUC with midranks, so tied scores count one half."""
    t = _binary(y_true, "y_true")
    s = np.asarray(scores, dtype=np.float64)
    if len(s) != len(t):
        raise ValueError("y_true and scores differ in length")
    n1 = int(t.sum())
    n0 = len(t) - n1
    if n1 == 0 or n0 == 0:
        raise SingleClassTruth("AUC needs both classes in y_true")
    order = np.argsort(s, kind="mergesort")
    ss = s[order]
    ranks = np.empty(len(s))
    # midrank for each run of equal scores
    bounds = np.flatnonzero(np.diff(ss)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [len(s)]])
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = 0.5 * (a + b + 1)
    u = ranks[t == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def capture_rate(scores, y_true, fraction: float = 0.10) -> float:
    """Share of all positives that land in the top ``ceil(fraction * n)`` scores."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    t = _binary(y_true, "y_true")
    s = np.asarray(scores, dtype=np.float64)
    total = int(t.sum())
    if total == 0:
        raise NoPositives("capture rate needs at least one positive")
    top = math.ceil(fraction * len(t) - 1e-12)
    order = np.argsort(-s, kind="stable")[:top]
    return float(t[order].sum() / total)


def _ratio(a: float, b: float) -> float:
    return a / b if b else 0.0


def compute_metrics(y_true, y_pred, scores=None, fraction: float = 0.10) -> MetricsReport:
    tp, fp, tn, fn = confusion(y_true, y_pred)
    n = tp + fp + tn + fn
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    try:
        auc_label = roc_auc(y_true, y_pred)
    except SingleClassTruth:
        auc_label = None
    auc = cap = None
    if scores is not None:
        try:
            auc = roc_auc(y_true, scores)
        except SingleClassTruth:
            pass
        if tp + fn:
            cap = capture_rate(scores, y_true, fraction)
    return MetricsReport(
        accuracy=_ratio(tp + tn, n),
        precision=precision,
        recall=recall,
        f1=f1,
        auc=auc,
        auc_label=auc_label,
        capture_rate=cap,
        confusion=(tp, fp, tn, fn),
    )
