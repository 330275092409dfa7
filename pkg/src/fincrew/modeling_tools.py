"""Typed tools used by the modeling crew's workers.

Each tool reads and writes files relative to the run's output directory and
returns a short text observation. Observations never contain absolute paths,
so recorded transcripts do not depend on where a run happens.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from . import tabular as tb
from .eda import render_eda_summary, run_eda, write_eda_report
from .errors import FileMissing, ToolError
from .models import estimator as est
from .models import selection
from .models.importance import feature_importance
from .models.metrics import compute_metrics
from .orchestration import Tool, ToolContext, ToolResult

STAGES = (
    "Exploratory Data Analysis",
    "Feature Engineering",
    "Model Selection",
    "Hyperparameter Tuning",
    "Model Training",
    "Model Evaluation",
)
# task id -> stage heading
STAGE_TASKS = dict(zip(("eda", "feature_engineering", "model_selection", "tuning", "training", "evaluation"), STAGES))


# helpers -------------------------------------------------------------------

def _path(ctx: ToolContext, rel: str) -> str:
    if not isinstance(rel, str) or not rel:
        raise ToolError("expected a relative file path")
    if os.path.isabs(rel):
        return rel
    # aliases map a prefix (or a whole name) to a location outside the workspace
    for prefix, target in (ctx.state.get("aliases") or {}).items():
        if rel == prefix:
            return os.fspath(target)
        if rel.startswith(prefix + "/"):
            return os.path.join(target, rel[len(prefix) + 1:])
    return os.path.join(ctx.workspace, rel)


def _require(tool_input: dict, *keys):
    missing = [k for k in keys if k not in tool_input]
    if missing:
        raise ToolError(f"missing input fields: {missing}")
    return [tool_input[k] for k in keys]


def _load(ctx: ToolContext, rel: str) -> tb.Table:
    try:
        return tb.load_csv(_path(ctx, rel))
    except FileMissing as exc:
        raise ToolError(f"no such file: {rel}") from exc


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def xy(table: tb.Table, target: str):
    if target not in table:
        raise ToolError(f"target column {target!r} not found")
    features = [c for c in table.column_names if c != target]
    for c in features:
        if not table.is_numeric(c):
            raise ToolError(f"feature {c!r} is not numeric; encode it first")
    return table.to_matrix(features), table.column(target).astype(np.int64), features


def _fmt_props(props: dict) -> str:
    return ", ".join(f"{k}: {v:.4f}" for k, v in props.items())


# EDA -------------------------------------------------------------------------

def eda_tool(tool_input: dict, ctx: ToolContext) -> ToolResult:
    path, target = _require(tool_input, "csv_path", "target")
    table = _load(ctx, path)
    report = run_eda(table, target)
    write_eda_report(report, os.path.join(ctx.workspace, "eda_report.json"))
    text = render_eda_summary(report)
    with open(os.path.join(ctx.workspace, "eda_summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    ctx.state["eda"] = report
    return ToolResult(text, [("eda_report", "eda_report.json"), ("eda_summary", "eda_summary.txt")])


# feature engineering -------------------------------------------------------

STEP_OPS = ("drop", "label_encode", "knn_impute", "smote", "downsample")


def _resample(op: str, table: tb.Table, target: str, step: dict, seed: int) -> tb.Table:
    if op == "smote":
        return tb.smote(table, target, k=int(step.get("k", 5)), seed=seed)
    return tb.random_downsample(table, target, seed=seed)


def apply_steps(train: tb.Table, test: tb.Table, target: str, steps: list, seed: int):
    """Run the feature-engineering steps. Everything is fitted on ``train``.

    Returns (train, test, log, kinds) where ``log`` lists what actually ran and
    ``kinds`` records which columns were categorical before encoding.
    """
    log = []
    kinds: dict[str, str] = {}
    for i, step in enumerate(steps):
        if not isinstance(step, dict) or step.get("op") not in STEP_OPS:
            raise ToolError(f"step {i} must be an object with op in {STEP_OPS}")
        op = step["op"]
        entry = {"op": op, "fit_on": "train"}
        if op == "drop":
            cols = [c for c in step.get("columns", []) if c in train]
            train, test = train.drop(cols), test.drop(cols)
            entry.update(columns=cols, applied_to=["train", "test"])
        elif op == "label_encode":
            schema = tb.infer_schema(train, target)
            state = tb.fit_label_encoders(train, schema)
            train = tb.apply_label_encoders(state, train)
            test = tb.apply_label_encoders(state, test)
            for c in state.mappings:
                kinds[c] = "categorical"
            entry.update(columns=list(state.mappings), applied_to=["train", "test"],
                         mappings=state.mappings)
        elif op == "knn_impute":
            k = int(step.get("k", 5))
            cats = [c for c in kinds if c in train]
            before = {c: int(tb.is_missing(train.column(c)).sum() + tb.is_missing(test.column(c)).sum())
                      for c in train.column_names if c != target}
            state = tb.fit_knn_imputer(train, k, categorical=cats, exclude=[target])
            train = tb.apply_knn_imputer(state, train)
            test = tb.apply_knn_imputer(state, test)
            filled = {c: n for c, n in before.items() if n}
            entry.update(k=k, filled_cells=filled, applied_to=["train", "test"])
        else:
            props = tb.class_proportions(train, target)
            majority = max(props.values())
            trigger = step.get("trigger")
            entry.update(class_proportions_before={str(k): v for k, v in props.items()})
            if trigger is not None and majority < float(trigger):
                entry.update(skipped=True, reason=f"majority share {majority:.4f} below {trigger}")
                log.append(entry)
                continue
            apply_test = bool(step.get("apply_to_test", False))
            n_train, n_test = train.n_rows, test.n_rows
            train = _resample(op, train, target, step, seed)
            if apply_test:
                test = _resample(op, test, target, step, seed + 1)
            entry.update(
                trigger=trigger,
                applied_to=["train", "test"] if apply_test else ["train"],
                rows={"train": [n_train, train.n_rows], "test": [n_test, test.n_rows]},
                class_proportions_after={str(k): v for k, v in tb.class_proportions(train, target).items()},
            )
            if op == "smote":
                entry["k"] = int(step.get("k", 5))
        log.append(entry)
    return train, test, log, kinds


def describe_step(entry: dict) -> str:
    op = entry["op"]
    where = " and ".join(entry.get("applied_to", []))
    if op == "drop":
        return f"Dropped column(s) {', '.join(entry['columns']) or '(none present)'} from {where}."
    if op == "label_encode":
        return (f"Label-encoded {', '.join(entry['columns']) or 'no columns'}; encoders fitted on train "
                f"and applied to {where}; unseen test categories map to a reserved code.")
    if op == "knn_impute":
        filled = ", ".join(f"{c} ({n} cells)" for c, n in entry["filled_cells"].items()) or "no missing cells"
        return f"KNN imputation (k={entry['k']}) fitted on train and applied to {where}: {filled}."
    name = "SMOTE oversampling" if op == "smote" else "Random downsampling of the majority class"
    if entry.get("skipped"):
        return f"{name} not applied: {entry['reason']}."
    rows = entry["rows"]
    return (f"{name} applied to {where} (train {rows['train'][0]} -> {rows['train'][1]} rows, "
            f"test {rows['test'][0]} -> {rows['test'][1]} rows).")


def feature_engineering_tool(tool_input: dict, ctx: ToolContext) -> ToolResult:
    train_path, test_path, target, steps = _require(tool_input, "train_path", "test_path", "target", "steps")
    if not isinstance(steps, list):
        raise ToolError("steps must be a list")
    out_train = tool_input.get("output_train", "train2.csv")
    out_test = tool_input.get("output_test", "test2.csv")
    train, test = _load(ctx, train_path), _load(ctx, test_path)
    seed = int(ctx.inputs.get("seed", 0))
    train2, test2, log, kinds = apply_steps(train, test, target, steps, seed)
    schema = tb.infer_schema(train2, target)
    pre = {s.name: s.kind for s in tb.infer_schema(train, target)}
    fixed = []
    for s in schema:
        kind = kinds.get(s.name) or (pre.get(s.name) if pre.get(s.name) == "binary-flag" else None)
        fixed.append(s if kind is None else tb.ColumnSchema(s.name, kind, s.missing_fraction, s.cardinality))
    tb.write_csv(train2, _path(ctx, out_train))
    tb.write_csv(test2, _path(ctx, out_test))
    write_json(os.path.join(ctx.workspace, "schema.json"),
               {"target": target, "columns": [s.to_dict() for s in fixed]})
    write_json(os.path.join(ctx.workspace, "fe_report.json"),
               {"steps": log, "train_shape": list(train2.shape), "test_shape": list(test2.shape)})
    ctx.state["fe_steps"] = log
    lines = [describe_step(e) for e in log]
    lines.append(f"Transformed train: {train2.n_rows} rows x {train2.n_cols} columns ({out_train}); "
                 f"test: {test2.n_rows} rows x {test2.n_cols} columns ({out_test}).")
    lines.append(f"Train class proportions: {_fmt_props(tb.class_proportions(train2, target))}.")
    return ToolResult("\n".join(lines), [("train2", out_train), ("test2", out_test),
                                         ("schema", "schema.json"), ("fe_report", "fe_report.json")])


# model selection and tuning --------------------------------------------------

def _grids(ctx: ToolContext) -> dict:
    return ctx.state.get("grids") or selection.DEFAULT_GRIDS


def model_selection_tool(tool_input: dict, ctx: ToolContext) -> ToolResult:
    train_path, target, candidates = _require(tool_input, "train_path", "target", "candidates")
    folds = int(tool_input.get("folds", 5))
    grids = _grids(ctx)
    bad = [c for c in candidates if c not in est.FAMILIES]
    if bad or not candidates:
        raise ToolError(f"candidates must be a nonempty subset of {est.FAMILIES}")
    X, y, _ = xy(_load(ctx, train_path), target)
    cache = ctx.state.setdefault("cv_cache", {})
    seed = int(ctx.inputs.get("seed", 0))
    res = selection.grid_search_select([(f, grids[f]) for f in candidates], X, y, folds, seed, cache)
    best_by_family = {}
    for row in res.cv_table:
        cur = best_by_family.get(row["family"])
        if cur is None or row["cv_accuracy"] > cur["cv_accuracy"]:
            best_by_family[row["family"]] = row
    write_json(os.path.join(ctx.workspace, "selection.json"), {
        "family": res.family, "hyperparams": res.hyperparams, "folds": folds,
        "cv_table": res.cv_table, "rationale": res.rationale,
    })
    ctx.state["selection"] = res
    lines = [f"Selected model family: {res.family}",
             f"Best combination: {json.dumps(res.hyperparams, sort_keys=True)}",
             f"Mean {folds}-fold CV accuracy by family (best combination):"]
    for fam in candidates:
        r = best_by_family[fam]
        lines.append(f"- {fam}: {r['cv_accuracy']:.4f} with {json.dumps(r['hyperparams'], sort_keys=True)}")
    lines.append(f"Rationale: {res.rationale}")
    return ToolResult("\n".join(lines), [("selection", "selection.json")])


def tuning_tool(tool_input: dict, ctx: ToolContext) -> ToolResult:
    train_path, target, family = _require(tool_input, "train_path", "target", "family")
    if family not in est.FAMILIES:
        raise ToolError(f"unknown family {family!r}")
    out = tool_input.get("output_path", "hyper_params.txt")
    folds = int(tool_input.get("folds", 5))
    grid = tool_input.get("grid") or _grids(ctx)[family]
    X, y, _ = xy(_load(ctx, train_path), target)
    cache = ctx.state.setdefault("cv_cache", {})
    seed = int(ctx.inputs.get("seed", 0))
    res = selection.grid_search_select([(family, grid)], X, y, folds, seed, cache)
    selection.write_hyperparams(res.hyperparams, _path(ctx, out))
    ctx.state["tuning"] = {"family": family, "hyperparams": res.hyperparams, "grid": grid,
                           "cv_accuracy": max(r["cv_accuracy"] for r in res.cv_table)}
    lines = [f"Tuned family: {family}",
             f"Search grid: {json.dumps(grid, sort_keys=True)}",
             f"Tuned hyperparameters: {json.dumps(res.hyperparams, sort_keys=True)}",
             f"Best mean CV accuracy: {ctx.state['tuning']['cv_accuracy']:.4f}",
             f"Saved to {out}."]
    return ToolResult("\n".join(lines), [("hyper_params", out)])


# training and evaluation -----------------------------------------------------

def training_tool(tool_input: dict, ctx: ToolContext) -> ToolResult:
    train_path, target, family = _require(tool_input, "train_path", "target", "family")
    if family not in est.FAMILIES:
        raise ToolError(f"unknown family {family!r}")
    hp_path = tool_input.get("hyperparams_path", "hyper_params.txt")
    model_path = tool_input.get("model_path", "model.json")
    try:
        hp = selection.read_hyperparams(_path(ctx, hp_path))
    except FileNotFoundError as exc:
        raise ToolError(f"no such file: {hp_path}") from exc
    X, y, features = xy(_load(ctx, train_path), target)
    seed = int(ctx.inputs.get("seed", 0))
    model = est.fit(family, hp, X, y, seed, feature_names=features)
    est.save_model(model, _path(ctx, model_path))
    train_acc = float(np.mean(model.predict(X) == y))
    ctx.state["training"] = {"family": family, "hyperparams": model.hyperparams,
                             "n_train": int(len(y)), "train_accuracy": train_acc}
    text = (f"Trained {family} with {json.dumps(model.hyperparams, sort_keys=True)} on {len(y)} rows "
            f"and {len(features)} features (seed {seed}).\nTraining accuracy: {train_acc:.4f}\n"
            f"Model saved to {model_path}.")
    return ToolResult(text, [("model", model_path)])


METRIC_KEYS = ("accuracy", "precision", "recall", "f1", "auc", "auc_label", "capture_rate")


def write_metrics_csv(metrics: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k in METRIC_KEYS:
            v = metrics.get(k)
            w.writerow([k, "" if v is None else repr(float(v))])
        for k, v in metrics["confusion"].items():
            w.writerow([k, v])


def evaluate(model: est.Estimator, table: tb.Table, target: str) -> dict:
    X, y, features = xy(table, target)
    if list(features) != list(model.feature_names):
        raise ToolError("test columns do not match the model's features")
    scores = model.predict_scores(X)
    return compute_metrics(y, model.predict(X), scores).to_dict()


def evaluation_tool(tool_input: dict, ctx: ToolContext) -> ToolResult:
    model_path, test_path, target = _require(tool_input, "model_path", "test_path", "target")
    metrics_path = tool_input.get("metrics_path", "metrics.csv")
    try:
        model = est.load_model(_path(ctx, model_path))
    except FileMissing as exc:
        raise ToolError(f"no such file: {model_path}") from exc
    test = _load(ctx, test_path)
    metrics = evaluate(model, test, target)
    imp = feature_importance(model, seed=int(ctx.inputs.get("seed", 0)))
    write_metrics_csv(metrics, _path(ctx, metrics_path))
    write_json(os.path.join(ctx.workspace, "evaluation.json"),
               {"metrics": metrics, "importance": imp.to_dict(), "n_test": test.n_rows})
    ctx.state["evaluation"] = {"metrics": metrics, "importance": imp}
    lines = ["Model Evaluation Metrics:"]
    for k in METRIC_KEYS:
        v = metrics[k]
        lines.append(f"{k}: {'n/a' if v is None else repr(v)}")
    c = metrics["confusion"]
    lines.append(f"confusion: tp={c['tp']} fp={c['fp']} tn={c['tn']} fn={c['fn']}")
    lines.append(f"Top features ({imp.method}): "
                 + ", ".join(f"{n}={v:.4f}" for n, v in imp.top_k(5)))
    return ToolResult("\n".join(lines), [("metrics", metrics_path), ("evaluation", "evaluation.json")])


# documentation ---------------------------------------------------------------

def documentation_tool(tool_input: dict, ctx: ToolContext) -> ToolResult:
    from .modeling_crew import render_documentation_from_parts

    out = tool_input.get("output_path", "crew_documentation.txt")
    sections = {}
    for tid in STAGE_TASKS:
        rec = ctx.memory.task_output(tid)
        sections[tid] = rec.content if rec is not None else ""
    text = render_documentation_from_parts(sections, ctx.workspace, ctx.state.get("recipe"))
    with open(_path(ctx, out), "w", encoding="utf-8") as fh:
        fh.write(text)
    headings = "; ".join(STAGES)
    return ToolResult(f"Documentation written to {out} with sections: {headings}.", [("documentation", out)])


def modeling_catalog():
    from .orchestration import ToolCatalog

    return ToolCatalog([
        Tool("eda_tool", "Exploratory Data Analysis Tool",
             "Profiles a CSV: shape, missing values, class balance, statistics, skewness, outliers and correlations.",
             eda_tool, {"csv_path": "CSV to profile", "target": "target column"}),
        Tool("feature_engineering_tool", "Feature Engineering Tool",
             "Applies ordered steps fitted on train: drop, label_encode, knn_impute, smote, downsample. "
             "Writes the transformed train and test CSVs.",
             feature_engineering_tool,
             {"train_path": "train CSV", "test_path": "test CSV", "target": "target column",
              "steps": "list of {op, ...}", "output_train": "output train CSV", "output_test": "output test CSV"}),
        Tool("model_selection_tool", "Model Selection Tool",
             "Grid search with stratified k-fold cross-validation over candidate model families.",
             model_selection_tool,
             {"train_path": "transformed train CSV", "target": "target column",
              "candidates": "list of families", "folds": "number of folds"}),
        Tool("tuning_tool", "Hyperparameter Tuning Tool",
             "Cross-validated grid search for one family; writes the best hyperparameters.",
             tuning_tool,
             {"train_path": "transformed train CSV", "target": "target column", "family": "model family",
              "output_path": "hyperparameter file"}),
        Tool("training_tool", "Model Training Tool",
             "Fits one model with the tuned hyperparameters and saves the model artifact.",
             training_tool,
             {"train_path": "transformed train CSV", "target": "target column", "family": "model family",
              "hyperparams_path": "hyperparameter file", "model_path": "model artifact"}),
        Tool("evaluation_tool", "Model Evaluation Tool",
             "Scores the saved model on the transformed test CSV and writes the metrics.",
             evaluation_tool,
             {"model_path": "model artifact", "test_path": "transformed test CSV", "target": "target column",
              "metrics_path": "metrics CSV"}),
        Tool("documentation_tool", "Documentation Tool",
             "Writes the technical documentation covering all six modeling stages.",
             documentation_tool, {"output_path": "documentation file"}),
    ])
