"""Exploratory data analysis: the numbers behind the EDA agent's summary."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import UnknownTarget
from .tabular import ColumnSchema, Table, class_proportions, infer_schema, is_missing

SKEW_THRESHOLD = 0.5
HIGH_CORRELATION = 0.8


@dataclass(frozen=True)
class EdaReport:
    shape: tuple
    target: str
    missing: dict  # column -> fraction
    correlation_columns: tuple
    correlation: np.ndarray  # Pearson; NaN where undefined
    stats: tuple  # ColumnSchema per column
    skewed_positive: tuple
    imbalance: dict
    outlier_counts: dict
    categorical_needing_encoding: tuple

    def schema(self, name: str) -> ColumnSchema:
        for s in self.stats:
            if s.name == name:
                return s
        raise KeyError(name)

    def high_correlations(self, threshold: float = HIGH_CORRELATION) -> list[tuple[str, str, float]]:
        out = []
        cols = self.correlation_columns
        for i in range(len(cols)):
            for j in range(i + 1, len(cols)):
                r = self.correlation[i, j]
                if np.isfinite(r) and abs(r) >= threshold:
                    out.append((cols[i], cols[j], float(r)))
        out.sort(key=lambda t: -abs(t[2]))
        return out

    def strongest_pair(self):
        cols = self.correlation_columns
        best = None
        for i in range(len(cols)):
            for j in range(i + 1, len(cols)):
                r = self.correlation[i, j]
                if np.isfinite(r) and (best is None or abs(r) > abs(best[2])):
                    best = (cols[i], cols[j], float(r))
        return best

    def to_dict(self) -> dict:
        corr = [[None if not np.isfinite(v) else float(v) for v in row] for row in self.correlation]
        return {
            "shape": list(self.shape),
            "target": self.target,
            "missing": self.missing,
            "correlation": {"columns": list(self.correlation_columns), "matrix": corr},
            "stats": [s.to_dict() for s in self.stats],
            "skewed_positive": list(self.skewed_positive),
            "imbalance": {str(k): v for k, v in self.imbalance.items()},
            "outlier_counts": self.outlier_counts,
            "outlier_rule": "IQR (outside Q1 - 1.5*IQR .. Q3 + 1.5*IQR)",
            "categorical_needing_encoding": list(self.categorical_needing_encoding),
        }


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson r over rows where both values are present; NaN if either side is constant."""
    ok = ~(np.isnan(x) | np.isnan(y))
    x, y = x[ok], y[ok]
    if len(x) < 2:
        return float("nan")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return float("nan")
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def correlation_matrix(table: Table, columns) -> np.ndarray:
    m = len(columns)
    out = np.eye(m)
    cols = [table.column(c) for c in columns]
    for i in range(m):
        for j in range(i + 1, m):
            out[i, j] = out[j, i] = pearson(cols[i], cols[j])
    return out


def iqr_outliers(values: np.ndarray) -> int:
    x = values[~np.isnan(values)]
    if len(x) == 0:
        return 0
    q1, q3 = np.percentile(x, [25, 75])
    iqr = q3 - q1
    return int(np.sum((x < q1 - 1.5 * iqr) | (x > q3 + 1.5 * iqr)))


def run_eda(table: Table, target: str) -> EdaReport:
    if target not in table:
        raise UnknownTarget(f"target column {target!r} not in table")
    schema = infer_schema(table, target)
    n = table.n_rows
    missing = {c: (float(is_missing(table.column(c)).sum()) / n if n else 0.0) for c in table.column_names}
    numeric = [c for c in table.column_names if c != target and table.is_numeric(c)]
    corr = correlation_matrix(table, numeric)
    skewed = tuple(s.name for s in schema if s.kind == "numeric" and (s.skewness or 0.0) > SKEW_THRESHOLD)
    present = ~is_missing(table.column(target))
    imbalance = class_proportions(table.take(np.flatnonzero(present)), target) if present.any() else {}
    outliers = {c: iqr_outliers(table.column(c)) for c in numeric}
    cats = tuple(s.name for s in schema if s.kind == "categorical")
    return EdaReport(table.shape, target, missing, tuple(numeric), corr, tuple(schema), skewed,
                     imbalance, outliers, cats)


def _pct(x: float) -> str:
    return f"{100 * x:.2f}%"


def render_eda_summary(report: EdaReport) -> str:
    rows, cols = report.shape
    with_missing = [(c, f) for c, f in report.missing.items() if f > 0]
    lines = ["Dataset Overview", "----------------",
             f"The dataset contains {rows} rows and {cols} columns.",
             f"Target column: {report.target}."]
    if with_missing:
        lines.append(f"{len(with_missing)} features have missing values: "
                     + ", ".join(f"'{c}' ({_pct(f)} missing)" for c, f in with_missing) + ".")
    else:
        lines.append("0 features have missing values.")
    if report.imbalance:
        parts = ", ".join(f"class {k}: {_pct(v)}" for k, v in report.imbalance.items())
        majority = max(report.imbalance.values())
        lines.append(f"Class balance: {parts} (majority share {_pct(majority)}).")

    lines += ["", "Feature Analysis", "----------------"]
    lines.append("Categorical features needing encoding: "
                 + (", ".join(f"'{c}'" for c in report.categorical_needing_encoding) or "none") + ".")
    lines.append(f"Positively skewed features (skewness > {SKEW_THRESHOLD}): "
                 + (", ".join(f"'{c}'" for c in report.skewed_positive) or "none") + ".")
    flagged = [(c, k) for c, k in report.outlier_counts.items() if k > 0]
    lines.append("Outliers by the IQR rule: "
                 + (", ".join(f"'{c}' ({k})" for c, k in flagged) or "none") + ".")

    lines += ["", "Descriptive Statistics", "----------------------"]
    for s in report.stats:
        if s.kind == "numeric" and s.mean is not None:
            lines.append(f"'{s.name}': Mean={s.mean:.2f}, Std={s.std:.2f}, Min={round(s.min, 4)}, Max={round(s.max, 4)}, "
                         f"Skewness={s.skewness:.2f}")
        else:
            lines.append(f"'{s.name}': {s.kind}, {s.cardinality} distinct values")

    lines += ["", "Correlation Analysis", "--------------------"]
    high = report.high_correlations()
    if high:
        for a, b, r in high:
            lines.append(f"'{a}' is highly correlated with '{b}' (r={r:.2f}).")
    else:
        lines.append(f"No pair of numeric features has |r| >= {HIGH_CORRELATION}.")
    pair = report.strongest_pair()
    if pair is not None:
        lines.append(f"Strongest pair: '{pair[0]}' and '{pair[1]}' (r={pair[2]:.2f}).")
    return "\n".join(lines) + "\n"


def write_eda_report(report: EdaReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
