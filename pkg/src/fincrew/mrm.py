"""Model risk management: compliance, replication, soundness and outcome analysis.

Every check has a deterministic core. The MRM crew wraps the checks as tools
so the same battery runs with a scripted policy, a replay transcript or a
live model behind the gateway.
"""

from __future__ import annotations

import csv
import json
import math
import os
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import plotting
from . import tabular as tb
from .errors import (
    DataMissing,
    EmptyGuide,
    FileMissing,
    MissingSubReport,
    NoNumericColumns,
    RowOutOfRange,
    ToolError,
)
from .gateway import ChatRequest, Gateway, Message
from .memory import MemoryStore
from .modeling_tools import METRIC_KEYS, STAGES, _path, _require, evaluate, read_json, write_json, xy
from .models import estimator as est
from .models.importance import default_method, feature_importance
from .models.selection import read_hyperparams
from .orchestration import (
    AgentSpec,
    CrewOutput,
    CrewSpec,
    TaskSpec,
    TemplatePolicy,
    Tool,
    ToolCatalog,
    ToolContext,
    ToolResult,
    build_crew,
    run_crew,
)
from .rng import substream

SAME_ENGINE_TOL = 1e-9
CROSS_ENGINE_TOL = 0.02
SHIFT_MODES = ("add-fixed", "add-random", "multiply-fixed")
DROP_THRESHOLD = 0.05
CHUNK_SIZE = 500
CHUNK_STRIDE = 250
TOP_CHUNKS = 3

# metric names used in the structured result object
RESULT_KEYS = {"accuracy": "accuracy", "F1_score": "f1", "precision": "precision", "ROC_AUC": "auc"}
OUTCOME_METRICS = ("accuracy", "precision", "recall", "f1", "auc")

STAGE_ALIASES = {"Exploratory Data Analysis": ("exploratory data analysis", "eda")}

_HEADING = re.compile(r"^##\s*\d+\.\s*(.+?)\s*$", re.MULTILINE)
_WORD = re.compile(r"[a-z0-9]+")
_BENCHMARK = re.compile(r"^\s*minimum\s+([a-z0-9\- ]+?)\s*:\s*([0-9]*\.?[0-9]+)", re.IGNORECASE | re.MULTILINE)
_BENCH_NAMES = {"accuracy": "accuracy", "auc": "auc", "roc auc": "auc", "f1": "f1", "f1-score": "f1",
                "f1 score": "f1", "precision": "precision", "recall": "recall"}


def bundled_guide_path() -> str:
    return str(resources.files("fincrew") / "data" / "modeling_guide.txt")


def _read_text(path) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except (FileNotFoundError, IsADirectoryError) as exc:
        raise FileMissing(f"cannot read {path}") from exc


# compliance ------------------------------------------------------------------

def chunk_text(text: str, size: int = CHUNK_SIZE, stride: int = CHUNK_STRIDE) -> list[str]:
    """Overlapping character windows; the last window always reaches the end."""
    if len(text) <= size:
        return [text]
    out, start = [], 0
    while True:
        out.append(text[start:start + size])
        if start + size >= len(text):
            return out
        start += stride


def _terms(text: str) -> list[str]:
    return _WORD.findall(text.lower())


class TfidfIndex:
    """Smoothed tf-idf vectors with cosine scoring over a fixed set of chunks."""

    def __init__(self, chunks):
        self.chunks = list(chunks)
        docs = [_terms(c) for c in self.chunks]
        vocab = sorted({t for d in docs for t in d})
        self.index = {t: i for i, t in enumerate(vocab)}
        n = len(docs)
        df = np.zeros(len(vocab))
        for d in docs:
            for t in set(d):
                df[self.index[t]] += 1
        self.idf = np.log((1 + n) / (1 + df)) + 1.0
        self.matrix = np.vstack([self._vector(d) for d in docs]) if docs else np.zeros((0, len(vocab)))

    def _vector(self, terms) -> np.ndarray:
        v = np.zeros(len(self.index))
        for t in terms:
            j = self.index.get(t)
            if j is not None:
                v[j] += 1.0
        v *= self.idf
        norm = np.linalg.norm(v)
        return v / norm if norm > 0 else v

    def scores(self, query: str) -> np.ndarray:
        return self.matrix @ self._vector(_terms(query))

    def top(self, query: str, k: int = TOP_CHUNKS) -> list[tuple[int, float]]:
        s = self.scores(query)
        order = sorted(range(len(s)), key=lambda i: (-s[i], i))
        return [(i, float(s[i])) for i in order[:k]]


def doc_sections(text: str) -> dict:
    """Numbered ``## N. Title`` sections keyed by case-folded title."""
    heads = list(_HEADING.finditer(text))
    out = {}
    for i, m in enumerate(heads):
        end = heads[i + 1].start() if i + 1 < len(heads) else len(text)
        out[m.group(1).casefold()] = text[m.end():end].strip()
    return out


def drop_doc_section(text: str, stage: str) -> str:
    """Remove the numbered section titled ``stage`` (heading and body)."""
    heads = list(_HEADING.finditer(text))
    for i, m in enumerate(heads):
        if m.group(1).casefold() == stage.casefold():
            end = heads[i + 1].start() if i + 1 < len(heads) else len(text)
            return text[:m.start()] + text[end:]
    raise KeyError(f"no section titled {stage!r}")


def mentions_stage(chunk: str, stage: str) -> bool:
    flat = " ".join(chunk.lower().split())
    for alias in STAGE_ALIASES.get(stage, (stage.lower(),)):
        if re.search(rf"\b{re.escape(alias)}\b", flat):
            return True
    return False


@dataclass
class ComplianceReport:
    stages: list  # one dict per stage
    verdict: str  # compliant | gaps-found
    narrative: str

    @property
    def gaps(self) -> list[str]:
        return [s["stage"] for s in self.stages if s["verdict"] != "pass"]

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "stages": self.stages, "narrative": self.narrative}


def check_compliance(doc_path, guide_path, gateway: Gateway | None = None) -> ComplianceReport:
    """Compare a model's documentation against the modeling guide, stage by stage.

    A stage passes when the documentation has a numbered heading for it and at
    least one of the guide excerpts retrieved for it mentions the stage. With a
    gateway, a short written assessment from the model is appended to the
    narrative; the verdict never depends on it.
    """
    doc = _read_text(doc_path)
    guide = _read_text(guide_path)
    if not guide.strip():
        raise EmptyGuide(f"guide {guide_path} is empty")
    chunks = chunk_text(guide)
    index = TfidfIndex(chunks)
    sections = doc_sections(doc)
    stages = []
    for stage in STAGES:
        body = sections.get(stage.casefold())
        hits = index.top(f"{stage} {body or ''}")
        excerpts = [{"chunk": i, "score": s, "mentions_stage": s > 0 and mentions_stage(chunks[i], stage),
                     "text": " ".join(chunks[i].split())[:160]} for i, s in hits]
        evidence = any(e["mentions_stage"] for e in excerpts)
        ok = body is not None and evidence
        if ok:
            reason = "documented and covered by the guide"
        elif body is None:
            reason = "no section for this stage in the documentation"
        else:
            reason = "no guide excerpt about this stage was retrieved"
        stages.append({"stage": stage, "heading_present": body is not None, "guide_evidence": evidence,
                       "verdict": "pass" if ok else "fail", "reason": reason, "excerpts": excerpts})
    gaps = [s for s in stages if s["verdict"] != "pass"]
    verdict = "gaps-found" if gaps else "compliant"
    if gaps:
        narrative = "Gaps found: " + "; ".join(f"{s['stage']} ({s['reason']})" for s in gaps) + "."
    else:
        narrative = (f"The documentation covers all {len(STAGES)} stages required by the guide, "
                     "and each stage is backed by a matching guide excerpt.")
    if gateway is not None:
        prompt = (f"Documentation compliance summary:\n{narrative}\n\n"
                  "Write two sentences assessing how well the documentation follows the guide.")
        resp = gateway.complete(ChatRequest((
            Message("system", "You review model documentation for a model risk team."),
            Message("user", prompt))))
        if resp.kind == "final" and resp.text.strip():
            narrative = f"{narrative}\n{resp.text.strip()}"
    return ComplianceReport(stages, verdict, narrative)


# replication -----------------------------------------------------------------

def read_metrics_csv(path) -> dict:
    if not os.path.exists(path):
        raise DataMissing(f"no reference metrics at {path}")
    out, confusion = {}, {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            k, v = row["metric"], row["value"]
            if k in METRIC_KEYS:
                out[k] = None if v == "" else float(v)
            else:
                confusion[k] = int(v)
    out["confusion"] = confusion
    return out


@dataclass
class ReplicationReport:
    reference: dict
    replicated: dict
    deltas: dict  # metric -> |reference - replicated|, None when only one side is defined
    tolerance: float
    verdict: str  # replicated | discrepancy

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "tolerance": self.tolerance, "reference": self.reference,
                "replicated": self.replicated, "deltas": self.deltas}


def compare_metrics(reference: dict, replicated: dict, tolerance: float) -> tuple[dict, str]:
    deltas, ok = {}, True
    for k in METRIC_KEYS:
        a, b = reference.get(k), replicated.get(k)
        if a is None and b is None:
            continue
        if a is None or b is None:
            deltas[k] = None
            ok = False
            continue
        deltas[k] = abs(float(a) - float(b))
        ok = ok and deltas[k] <= tolerance
    return deltas, "replicated" if ok else "discrepancy"


def replicate_model(train2: tb.Table, test2: tb.Table, target: str, family: str, hyperparams: dict,
                    reference_metrics: dict, seed: int = 0, tolerance: float = SAME_ENGINE_TOL) -> ReplicationReport:
    """Refit from scratch with the documented family, hyperparameters and seed, then compare."""
    if train2 is None or test2 is None or not train2.n_rows or not test2.n_rows:
        raise DataMissing("replication needs the transformed train and test tables")
    if not reference_metrics:
        raise DataMissing("replication needs the reference metrics")
    X, y, features = xy(train2, target)
    model = est.fit(family, hyperparams, X, y, seed, feature_names=features)
    replicated = evaluate(model, test2, target)
    reference = {k: reference_metrics.get(k) for k in METRIC_KEYS}
    deltas, verdict = compare_metrics(reference, replicated, tolerance)
    return ReplicationReport(reference, {k: replicated[k] for k in METRIC_KEYS}, deltas, tolerance, verdict)


# conceptual soundness --------------------------------------------------------

def parse_benchmarks(guide_text: str) -> dict:
    """``Minimum <metric>: <value>`` lines -> {metric key: value}."""
    out = {}
    for name, value in _BENCHMARK.findall(guide_text):
        key = _BENCH_NAMES.get(name.strip().lower())
        if key:
            out[key] = float(value)
    return out


@dataclass
class SoundnessReport:
    importance: dict  # ImportanceReport.to_dict()
    top_features: list  # [[name, score], ...] at most 10
    checklist: dict  # name -> {"passed": bool, "detail": str}
    metrics: dict
    narrative: str
    verdict: str  # sound | concerns

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "top_features": self.top_features, "checklist": self.checklist,
                "metrics": self.metrics, "importance": self.importance, "narrative": self.narrative}


def assess_soundness(model, test2: tb.Table, target: str, guide_text: str = "", plausible=(),
                     seed: int = 0, k: int = 10, overlap_k: int = 5) -> SoundnessReport:
    """Importance structure, benchmark and plausibility checks for a trained model.

    ``model`` is an Estimator or a path to a saved artifact.
    """
    if not isinstance(model, est.Estimator):
        model = est.load_model(model)
    metrics = evaluate(model, test2, target)
    imp = feature_importance(model, seed=seed)
    top = imp.top_k(k)
    checklist = {}

    bench = parse_benchmarks(guide_text)
    misses = [f"{m} {metrics.get(m)} < {v}" for m, v in bench.items()
              if metrics.get(m) is None or metrics[m] < v]
    if not bench:
        detail = "the guide states no minimum benchmarks"
    elif misses:
        detail = "below benchmark: " + "; ".join(misses)
    else:
        detail = "meets " + ", ".join(f"{m} >= {v}" for m, v in bench.items())
    checklist["benchmarks"] = {"passed": not misses, "detail": detail}

    leaders = [n for n, _ in imp.top_k(overlap_k)]
    if plausible:
        hit = [n for n in leaders if n in set(plausible)]
        checklist["plausibility"] = {
            "passed": bool(hit),
            "detail": (f"top-{overlap_k} features {leaders} include expected drivers {hit}" if hit
                       else f"none of the top-{overlap_k} features {leaders} is an expected driver")}
    else:
        checklist["plausibility"] = {"passed": True, "detail": "no expected drivers declared"}

    expected = default_method(model.family)
    checklist["importance_method"] = {
        "passed": imp.method == expected,
        "detail": f"{imp.method} importance for {model.family} (expected {expected})"}

    lead = ", ".join(n for n, _ in top[:3])
    narrative = (f"The {model.family} model ranks {lead} as its leading drivers by {imp.method} importance. "
                 + ("All checklist items pass." if all(c["passed"] for c in checklist.values())
                    else "Open items: " + ", ".join(n for n, c in checklist.items() if not c["passed"]) + "."))
    verdict = "sound" if all(c["passed"] for c in checklist.values()) else "concerns"
    return SoundnessReport(imp.to_dict(), [[n, v] for n, v in top], checklist,
                           {m: metrics[m] for m in METRIC_KEYS}, narrative, verdict)


# outcome analysis ------------------------------------------------------------

def _schema_list(table: tb.Table, schema, target) -> list[tb.ColumnSchema]:
    if schema is None:
        return tb.infer_schema(table, target) if target else [
            tb.ColumnSchema(c, "numeric" if table.is_numeric(c) else "categorical", 0.0, 0)
            for c in table.column_names]
    if isinstance(schema, dict):
        schema = schema["columns"]
    return [s if isinstance(s, tb.ColumnSchema) else tb.ColumnSchema.from_dict(s) for s in schema]


def numeric_features(table: tb.Table, schema=None, target: str | None = None) -> list[str]:
    cols = _schema_list(table, schema, target)
    return [s.name for s in cols if s.kind == "numeric" and s.name != target and s.name in table
            and table.is_numeric(s.name)]


def perturb_shifted(table: tb.Table, schema=None, mode: str = "add-random", magnitude: float = 1.0,
                    seed: int = 0, target: str | None = None) -> tb.Table:
    """Shift numeric feature columns; everything else is left bit-identical.

    add-fixed adds ``c * sigma``, add-random adds N(0, (c * sigma)^2) noise and
    multiply-fixed scales by ``1 + c``. ``sigma`` comes from the schema when it
    records one, otherwise from the column itself.
    """
    if mode not in SHIFT_MODES:
        raise ValueError(f"mode must be one of {SHIFT_MODES}")
    cols = _schema_list(table, schema, target)
    names = numeric_features(table, cols, target)
    if not names:
        raise NoNumericColumns("no numeric feature columns to perturb")
    std = {s.name: s.std for s in cols}
    rng = substream(seed, "perturb")
    c = float(magnitude)
    out = table
    for name in names:
        x = table.column(name).astype(np.float64)
        sigma = std.get(name)
        if sigma is None:
            present = x[~np.isnan(x)]
            sigma = float(np.std(present, ddof=1)) if len(present) > 1 else 0.0
        if mode == "add-fixed":
            y = x + c * sigma
        elif mode == "add-random":
            y = x + rng.normal(0.0, abs(c) * sigma, size=len(x))
        else:
            y = x * (1.0 + c)
        out = out.with_column(name, y)
    return out


def perturb_outliers(table: tb.Table, rows=(0,), magnitude: float = 1000.0, schema=None,
                     target: str | None = None) -> tb.Table:
    """Add ``magnitude`` to every numeric feature cell of the listed rows."""
    rows = [int(r) for r in rows]
    bad = [r for r in rows if r < 0 or r >= table.n_rows]
    if bad:
        raise RowOutOfRange(f"rows {bad} outside 0..{table.n_rows - 1}")
    if not rows:
        return table
    names = numeric_features(table, schema, target)
    if not names:
        raise NoNumericColumns("no numeric feature columns to perturb")
    out = table
    for name in names:
        x = table.column(name).astype(np.float64).copy()
        x[rows] += magnitude
        out = out.with_column(name, x)
    return out


def _subset(metrics: dict) -> dict:
    return {m: metrics[m] for m in OUTCOME_METRICS}


@dataclass
class OutcomeReport:
    baseline: dict
    shifted: dict
    outlier: dict
    deltas: dict  # variant -> metric -> variant minus baseline
    flags: list
    narrative: str
    settings: dict = field(default_factory=dict)

    def result_object(self) -> dict:
        def pick(m):
            return {k: m[v] for k, v in RESULT_KEYS.items()}

        return {"shifted_inputs": pick(self.shifted), "adversarial_outlier_inputs": pick(self.outlier)}

    def to_dict(self) -> dict:
        return {"baseline": self.baseline, "shifted": self.shifted, "outlier": self.outlier,
                "deltas": self.deltas, "flags": self.flags, "narrative": self.narrative,
                "settings": self.settings}


def analyze_outcomes(model, test2: tb.Table, schema=None, target: str = "", seed: int = 0,
                     mode: str = "add-random", magnitude: float = 1.0, rows=(0,),
                     outlier_magnitude: float = 1000.0, threshold: float = DROP_THRESHOLD) -> OutcomeReport:
    """Score the model on the clean, shifted and outlier versions of the test set."""
    if not isinstance(model, est.Estimator):
        model = est.load_model(model)
    base = _subset(evaluate(model, test2, target))
    shifted = _subset(evaluate(model, perturb_shifted(test2, schema, mode, magnitude, seed, target), target))
    outlier = _subset(evaluate(model, perturb_outliers(test2, rows, outlier_magnitude, schema, target), target))
    deltas, flags = {}, []
    for name, variant in (("shifted", shifted), ("outlier", outlier)):
        deltas[name] = {m: variant[m] - base[m] for m in OUTCOME_METRICS}
        for m, d in deltas[name].items():
            if -d > threshold:
                flags.append(f"{name} {m} dropped by {-d:.4f}")
    parts = [f"Baseline accuracy {base['accuracy']:.4f}.",
             f"With shifted inputs ({mode}, c={magnitude}) accuracy is {shifted['accuracy']:.4f}.",
             f"With outliers added to {len(list(rows))} row(s) accuracy is {outlier['accuracy']:.4f}."]
    if flags:
        parts.append(f"Sensitivity: {'; '.join(flags)} (threshold {threshold}).")
    else:
        parts.append(f"No metric dropped by more than {threshold}.")
    settings = {"mode": mode, "magnitude": magnitude, "rows": [int(r) for r in rows],
                "outlier_magnitude": outlier_magnitude, "threshold": threshold, "seed": seed,
                "n_test": test2.n_rows}
    return OutcomeReport(base, shifted, outlier, deltas, flags, " ".join(parts), settings)


# report ----------------------------------------------------------------------

def overall_verdict(compliance: ComplianceReport, replication: ReplicationReport,
                    soundness: SoundnessReport) -> str:
    ok = (compliance.verdict == "compliant" and replication.verdict == "replicated"
          and soundness.verdict == "sound")
    return "pass" if ok else "flagged"


def _num(v) -> str:
    return "n/a" if v is None else f"{v:.6f}"


def render_mrm_report(compliance, replication, soundness, outcome, title: str = "Model Risk Management Report") -> str:
    subs = {"compliance": compliance, "replication": replication, "soundness": soundness, "outcome": outcome}
    missing = [k for k, v in subs.items() if v is None]
    if missing:
        raise MissingSubReport(f"missing sub-report(s): {', '.join(missing)}")
    lines = [title, "=" * len(title), ""]

    lines += ["## 1. Documentation Compliance", "", f"Verdict: {compliance.verdict}", "",
              "| stage | heading | guide evidence | verdict |", "|---|---|---|---|"]
    for s in compliance.stages:
        lines.append(f"| {s['stage']} | {'yes' if s['heading_present'] else 'no'} | "
                     f"{'yes' if s['guide_evidence'] else 'no'} | {s['verdict']} |")
    lines += ["", compliance.narrative, ""]

    lines += ["## 2. Model Replication", "", f"Verdict: {replication.verdict} (tolerance {replication.tolerance:g})",
              "", "| metric | reference | replicated | delta |", "|---|---|---|---|"]
    for k in METRIC_KEYS:
        if k in replication.deltas:
            lines.append(f"| {k} | {_num(replication.reference.get(k))} | {_num(replication.replicated.get(k))} | "
                         f"{_num(replication.deltas[k])} |")
    lines.append("")

    lines += ["## 3. Conceptual Soundness", "", f"Verdict: {soundness.verdict}", "",
              f"Feature importance ({soundness.importance['method']}), top {len(soundness.top_features)}:"]
    lines += [f"- {n}: {v:.6f}" for n, v in soundness.top_features]
    lines += ["", "| check | passed | detail |", "|---|---|---|"]
    for name, c in soundness.checklist.items():
        lines.append(f"| {name} | {'yes' if c['passed'] else 'no'} | {c['detail']} |")
    lines += ["", soundness.narrative, ""]

    lines += ["## 4. Outcome Analysis", "",
              "| metric | baseline | shifted | outlier |", "|---|---|---|---|"]
    for m in OUTCOME_METRICS:
        lines.append(f"| {m} | {_num(outcome.baseline[m])} | {_num(outcome.shifted[m])} | {_num(outcome.outlier[m])} |")
    lines += ["", outcome.narrative, ""]

    lines.append(f"Overall verdict: {overall_verdict(compliance, replication, soundness)}")
    return "\n".join(lines) + "\n"


# crew ------------------------------------------------------------------------

MRM_MANAGER = "Model Risk Manager"
COMPLIANCE_AGENT = "Senior Data Scientist - Documentation Compliance"
REPLICATION_AGENT = "Senior Machine Learning Engineer - Model Replication"
SOUNDNESS_AGENT = "Senior Model Validation Analyst - Conceptual Soundness"
OUTCOME_AGENT = "Senior Model Validation Analyst - Outcome Analyzer"
MRM_WRITER = "Documentation Writer"

REQUIRED_FILES = ("crew_documentation.txt", "train2.csv", "test2.csv", "model.json", "metrics.csv",
                  "hyper_params.txt", "schema.json", "report.json")


def _mrm_state(ctx: ToolContext) -> dict:
    return ctx.state.setdefault("mrm", {})


def _table(ctx, rel) -> tb.Table:
    try:
        return tb.load_csv(_path(ctx, rel))
    except FileMissing as exc:
        raise ToolError(f"no such file: {rel}") from exc


def compliance_tool(tool_input: dict, ctx: ToolContext) -> ToolResult:
    doc, guide = _require(tool_input, "documentation_path", "guide_path")
    try:
        rep = check_compliance(_path(ctx, doc), _path(ctx, guide))
    except FileMissing as exc:
        raise ToolError(str(exc)) from exc
    _mrm_state(ctx)["compliance"] = rep
    write_json(os.path.join(ctx.workspace, "compliance.json"), rep.to_dict())
    lines = [f"Compliance verdict: {rep.verdict}"]
    lines += [f"- {s['stage']}: {s['verdict']} ({s['reason']})" for s in rep.stages]
    lines.append(rep.narrative)
    return ToolResult("\n".join(lines), [("compliance", "compliance.json")])


def replication_tool(tool_input: dict, ctx: ToolContext) -> ToolResult:
    train, test, target, family, hp_path, ref_path = _require(
        tool_input, "train_path", "test_path", "target", "family", "hyperparams_path", "reference_metrics_path")
    if family not in est.FAMILIES:
        raise ToolError(f"unknown family {family!r}")
    tol = float(tool_input.get("tolerance", SAME_ENGINE_TOL))
    try:
        hp = read_hyperparams(_path(ctx, hp_path))
    except FileNotFoundError as exc:
        raise ToolError(f"no such file: {hp_path}") from exc
    try:
        ref = read_metrics_csv(_path(ctx, ref_path))
    except DataMissing as exc:
        raise ToolError(str(exc)) from exc
    rep = replicate_model(_table(ctx, train), _table(ctx, test), target, family, hp, ref,
                          int(ctx.inputs.get("seed", 0)), tol)
    _mrm_state(ctx)["replication"] = rep
    write_json(os.path.join(ctx.workspace, "replication.json"), rep.to_dict())
    lines = [f"Replication verdict: {rep.verdict} (tolerance {tol:g})",
             f"Refit {family} with {json.dumps(hp, sort_keys=True)}."]
    for k, d in rep.deltas.items():
        lines.append(f"{k}: reference {rep.reference[k]!r}, replicated {rep.replicated[k]!r}, delta {d!r}")
    return ToolResult("\n".join(lines), [("replication", "replication.json")])


def soundness_tool(tool_input: dict, ctx: ToolContext) -> ToolResult:
    model_path, test, target = _require(tool_input, "model_path", "test_path", "target")
    guide = tool_input.get("guide_path")
    guide_text = ""
    if guide:
        try:
            guide_text = _read_text(_path(ctx, guide))
        except FileMissing as exc:
            raise ToolError(str(exc)) from exc
    try:
        model = est.load_model(_path(ctx, model_path))
    except FileMissing as exc:
        raise ToolError(f"no such file: {model_path}") from exc
    rep = assess_soundness(model, _table(ctx, test), target, guide_text,
                           tuple(tool_input.get("plausible_features") or ()), int(ctx.inputs.get("seed", 0)))
    _mrm_state(ctx)["soundness"] = rep
    write_json(os.path.join(ctx.workspace, "soundness.json"), rep.to_dict())
    lines = [f"Soundness verdict: {rep.verdict}",
             f"Top features ({rep.importance['method']}): "
             + ", ".join(f"{n}={v:.4f}" for n, v in rep.top_features)]
    lines += [f"- {n}: {'pass' if c['passed'] else 'fail'} ({c['detail']})" for n, c in rep.checklist.items()]
    lines.append(rep.narrative)
    return ToolResult("\n".join(lines), [("soundness", "soundness.json")])


def outcome_tool(tool_input: dict, ctx: ToolContext) -> ToolResult:
    model_path, test, target = _require(tool_input, "model_path", "test_path", "target")
    schema = None
    if tool_input.get("schema_path"):
        try:
            schema = read_json(_path(ctx, tool_input["schema_path"]))
        except FileNotFoundError as exc:
            raise ToolError(f"no such file: {tool_input['schema_path']}") from exc
    mode = tool_input.get("mode", "add-random")
    if mode not in SHIFT_MODES:
        raise ToolError(f"mode must be one of {SHIFT_MODES}")
    try:
        model = est.load_model(_path(ctx, model_path))
    except FileMissing as exc:
        raise ToolError(f"no such file: {model_path}") from exc
    rep = analyze_outcomes(model, _table(ctx, test), schema, target, int(ctx.inputs.get("seed", 0)), mode,
                           float(tool_input.get("magnitude", 1.0)), tuple(tool_input.get("outlier_rows", (0,))),
                           float(tool_input.get("outlier_magnitude", 1000.0)),
                           float(tool_input.get("threshold", DROP_THRESHOLD)))
    _mrm_state(ctx)["outcome"] = rep
    write_json(os.path.join(ctx.workspace, "outcome.json"), rep.to_dict())
    text = "Outcome analysis result:\n" + json.dumps(rep.result_object(), indent=2, sort_keys=True) + "\n" + rep.narrative
    return ToolResult(text, [("outcome", "outcome.json")])


def mrm_report_tool(tool_input: dict, ctx: ToolContext) -> ToolResult:
    out = tool_input.get("output_path", "mrm_report.md")
    st = _mrm_state(ctx)
    text = render_mrm_report(st.get("compliance"), st.get("replication"), st.get("soundness"), st.get("outcome"))
    with open(_path(ctx, out), "w", encoding="utf-8") as fh:
        fh.write(text)
    verdict = overall_verdict(st["compliance"], st["replication"], st["soundness"])
    return ToolResult(f"MRM report written to {out}. Overall verdict: {verdict}.", [("mrm_report", out)])


def mrm_catalog() -> ToolCatalog:
    return ToolCatalog([
        Tool("compliance_tool", "Documentation Compliance Tool",
             "Retrieves guide excerpts for each modeling stage and checks the documentation covers it.",
             compliance_tool, {"documentation_path": "model documentation", "guide_path": "modeling guide"}),
        Tool("replication_tool", "Model Replication Tool",
             "Refits the documented model and compares its test metrics with the reference metrics.",
             replication_tool,
             {"train_path": "transformed train CSV", "test_path": "transformed test CSV", "target": "target column",
              "family": "model family", "hyperparams_path": "hyperparameter file",
              "reference_metrics_path": "reference metrics CSV", "tolerance": "absolute tolerance"}),
        Tool("soundness_tool", "Conceptual Soundness Tool",
             "Feature importance, benchmark checks and plausibility of the leading features.",
             soundness_tool,
             {"model_path": "model artifact", "test_path": "transformed test CSV", "target": "target column",
              "guide_path": "modeling guide", "plausible_features": "expected drivers"}),
        Tool("outcome_tool", "Outcome Analysis Tool",
             "Scores the model on shifted and outlier versions of the test set.",
             outcome_tool,
             {"model_path": "model artifact", "test_path": "transformed test CSV", "target": "target column",
              "schema_path": "column schema", "mode": "add-fixed | add-random | multiply-fixed",
              "magnitude": "shift size c", "outlier_rows": "row indices", "outlier_magnitude": "added value"}),
        Tool("mrm_report_tool", "MRM Report Tool",
             "Writes the validation report from the four sub-reports.",
             mrm_report_tool, {"output_path": "report file"}),
    ])


@dataclass
class MrmConfig:
    model_dir: str
    output_dir: str
    guide_path: str | None = None
    target: str | None = None
    family: str | None = None
    seed: int | None = None
    plausible_features: tuple = ()
    shift_mode: str = "add-random"
    shift_magnitude: float = 1.0
    outlier_rows: tuple = (0,)
    outlier_magnitude: float = 1000.0
    tolerance: float = SAME_ENGINE_TOL
    threshold: float = DROP_THRESHOLD

    def resolved(self) -> "MrmConfig":
        """Fill target, family, seed and expected drivers from the modeling run's report."""
        missing = [f for f in REQUIRED_FILES if not os.path.exists(os.path.join(self.model_dir, f))]
        if missing:
            raise DataMissing(f"modeling output in {self.model_dir} lacks {', '.join(missing)}")
        rep = read_json(os.path.join(self.model_dir, "report.json"))
        guide = self.guide_path or bundled_guide_path()
        if not os.path.exists(guide):
            raise FileMissing(f"guide not found: {guide}")
        return MrmConfig(
            os.fspath(self.model_dir), os.fspath(self.output_dir), os.fspath(guide),
            self.target or rep["target"], self.family or rep["selected_family"],
            rep["seed"] if self.seed is None else self.seed,
            tuple(self.plausible_features or rep.get("plausible_features", ())),
            self.shift_mode, self.shift_magnitude, tuple(self.outlier_rows), self.outlier_magnitude,
            self.tolerance, self.threshold)


def build_mrm_crew() -> CrewSpec:
    def worker(role, goal, backstory, tool):
        return AgentSpec(role, goal, backstory, (tool,), allow_delegation=False, max_iterations=4)

    agents = (
        worker(COMPLIANCE_AGENT, "Check the model documentation against the organizational modeling guide.",
               "Knows the modeling guide by heart and reads documentation line by line.", "compliance_tool"),
        worker(REPLICATION_AGENT, "Rebuild the model independently and confirm its reported metrics.",
               "Trusts numbers only after reproducing them.", "replication_tool"),
        worker(SOUNDNESS_AGENT, "Judge whether the model's drivers and benchmarks make business sense.",
               "Has reviewed credit scorecards for regulators.", "soundness_tool"),
        worker(OUTCOME_AGENT, "Stress the model with shifted and outlier inputs.",
               "Looks for the inputs that break a model before customers do.", "outcome_tool"),
        worker(MRM_WRITER, "Write the validation report from the team's findings.",
               "A technical writer embedded with the validation team.", "mrm_report_tool"),
    )
    manager = AgentSpec(MRM_MANAGER, "Run an independent validation of the submitted model.",
                        "Heads model risk management and assigns each review to a specialist.",
                        allow_delegation=True, max_iterations=3)
    tasks = (
        TaskSpec("compliance",
                 "Check that {documentation_path} documents every stage required by the modeling guide "
                 "{guide_path}, and list any gaps.",
                 "A per-stage compliance verdict with an overall verdict.", COMPLIANCE_AGENT),
        TaskSpec("replication",
                 "Replicate the {family} model on {train_path} (target '{target}') with the hyperparameters "
                 "in {hyperparams_path}, evaluate it on {test_path}, and compare with {metrics_path}.",
                 "Reference and replicated metrics with their differences.", REPLICATION_AGENT),
        TaskSpec("soundness",
                 "Assess the conceptual soundness of {model_path} on {test_path} (target '{target}'): feature "
                 "importance, the guide's minimum benchmarks, and whether the leading features are plausible.",
                 "Feature importance with a checklist verdict.", SOUNDNESS_AGENT),
        TaskSpec("outcome",
                 "Evaluate {model_path} on {test_path} (target '{target}') after shifting the numeric inputs "
                 "and after adding large outliers to one row. Leave categorical features unchanged.",
                 "Baseline, shifted and outlier metrics with a robustness summary.", OUTCOME_AGENT),
        TaskSpec("report",
                 "Write the model risk management report to mrm_report.md from the team's findings.",
                 "Confirmation that the report was written with its overall verdict.", MRM_WRITER,
                 ("compliance", "replication", "soundness", "outcome")),
    )
    return CrewSpec(agents, tasks, "hierarchical", manager)


def mrm_inputs(cfg: MrmConfig) -> dict:
    return {
        "documentation_path": "modeling/crew_documentation.txt", "guide_path": "guide.txt",
        "train_path": "modeling/train2.csv", "test_path": "modeling/test2.csv",
        "model_path": "modeling/model.json", "metrics_path": "modeling/metrics.csv",
        "hyperparams_path": "modeling/hyper_params.txt", "schema_path": "modeling/schema.json",
        "target": cfg.target, "family": cfg.family, "seed": cfg.seed,
    }


def mrm_tool_plan(cfg: MrmConfig) -> dict:
    i = mrm_inputs(cfg)
    return {
        "compliance": ("compliance_tool", {"documentation_path": i["documentation_path"],
                                           "guide_path": i["guide_path"]}),
        "replication": ("replication_tool", {
            "train_path": i["train_path"], "test_path": i["test_path"], "target": cfg.target,
            "family": cfg.family, "hyperparams_path": i["hyperparams_path"],
            "reference_metrics_path": i["metrics_path"], "tolerance": cfg.tolerance}),
        "soundness": ("soundness_tool", {
            "model_path": i["model_path"], "test_path": i["test_path"], "target": cfg.target,
            "guide_path": i["guide_path"], "plausible_features": list(cfg.plausible_features)}),
        "outcome": ("outcome_tool", {
            "model_path": i["model_path"], "test_path": i["test_path"], "target": cfg.target,
            "schema_path": i["schema_path"], "mode": cfg.shift_mode, "magnitude": cfg.shift_magnitude,
            "outlier_rows": list(cfg.outlier_rows), "outlier_magnitude": cfg.outlier_magnitude,
            "threshold": cfg.threshold}),
        "report": ("mrm_report_tool", {"output_path": "mrm_report.md"}),
    }


@dataclass
class MrmResult:
    crew_output: CrewOutput
    result: dict
    verdict: str
    gateway_calls: int


def run_mrm(cfg: MrmConfig, mode: str = "live", transcript=None, upstream: str = "scripted",
            gateway: Gateway | None = None, figures: bool = True) -> MrmResult:
    """Validate a finished modeling run and write the MRM report files into ``cfg.output_dir``."""
    from .modeling_crew import make_gateway

    cfg = cfg.resolved()
    ws = cfg.output_dir
    os.makedirs(ws, exist_ok=True)
    spec = build_mrm_crew()
    if gateway is None:
        gateway = make_gateway(mode, transcript, upstream, TemplatePolicy(spec, mrm_tool_plan(cfg)))
    crew = build_crew(spec, mrm_catalog(), MemoryStore())
    state = {"aliases": {"modeling": cfg.model_dir, "guide.txt": cfg.guide_path}}
    out = run_crew(crew, mrm_inputs(cfg), gateway, log_path=os.path.join(ws, "run_log.jsonl"),
                   workspace=ws, state=state)
    st = state.get("mrm", {})
    missing = [k for k in ("compliance", "replication", "soundness", "outcome") if k not in st]
    if missing:
        raise MissingSubReport(f"the crew finished without: {', '.join(missing)}")
    verdict = overall_verdict(st["compliance"], st["replication"], st["soundness"])
    outcome = st["outcome"]
    result = {
        "overall_verdict": verdict,
        "compliance": st["compliance"].to_dict(),
        "replication": st["replication"].to_dict(),
        "soundness": st["soundness"].to_dict(),
        "outcome": outcome.to_dict(),
        "outcome_analysis_report": outcome.narrative,
        "result": outcome.result_object(),
        "model": {"family": cfg.family, "target": cfg.target, "seed": cfg.seed},
        "crew": out.to_dict(timestamps=False),
    }
    write_json(os.path.join(ws, "mrm_result.json"), result)
    if figures:
        d = os.path.join(ws, "figures")
        plotting.plot_robustness({"baseline": outcome.baseline, "shifted": outcome.shifted,
                                  "outlier": outcome.outlier}, os.path.join(d, "robustness.png"))
        plotting.plot_importance(st["soundness"].importance["scores"], os.path.join(d, "mrm_importance.png"),
                                 st["soundness"].importance["method"])
    return MrmResult(out, result, verdict, gateway.calls)


def accuracy_bound(n_rows_changed: int, n_test: int) -> float:
    """Largest accuracy change that changing ``n_rows_changed`` predictions can cause."""
    return n_rows_changed / n_test if n_test else math.inf
