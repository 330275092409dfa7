"""The modeling crew: personas, recipes, task templates and the end-to-end run."""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field, replace

from . import plotting
from . import tabular as tb
from .errors import DataMissing, FileMissing, IncompleteCrewOutput, InvalidRecipe
from .gateway import Gateway
from .memory import MemoryStore
from .modeling_tools import STAGE_TASKS, STAGES, modeling_catalog, read_json, write_json
from .models.estimator import FAMILIES
from .models.selection import DEFAULT_GRIDS
from .orchestration import AgentSpec, CrewOutput, CrewSpec, TaskSpec, TemplatePolicy, build_crew, run_crew
from .synthetic import TARGET as SYNTH_TARGET
from .synthetic import generate_synthetic_dataset, informative_features

RECIPES = ("credit", "fraud", "card", "synthetic")
STRATEGIES = ("smote", "downsample")

MANAGER = "Data Science Manager"
EDA_AGENT = "Senior Data Scientist I"
FE_AGENT = "Senior Data Scientist II"
SELECTION_AGENT = "Machine Learning Engineer I"
TUNING_AGENT = "Senior Machine Learning Engineer I"
TRAINING_AGENT = "Senior Machine Learning Engineer II"
EVALUATION_AGENT = "Senior Machine Learning Engineer III"
WRITER = "Documentation Writer"

# compact grids keep the hermetic synthetic run fast
SYNTHETIC_GRIDS = {
    "logistic-regression": {"l2": [0.1, 1.0]},
    "decision-tree": {"max_depth": [3, 5]},
    "random-forest": {"n_estimators": [50], "max_depth": [5]},
    "gradient-boosting": {"learning_rate": [0.1], "max_depth": [3], "n_estimators": [50, 100]},
}


@dataclass(frozen=True)
class Recipe:
    name: str
    paths: dict
    target: str
    output_dir: str
    seed: int = 42
    target_transform: str | None = None
    drop_columns: tuple = ()
    imbalance_strategy: str = "smote"
    imbalance_trigger: float | None = 0.60
    resample_test: bool = False
    families: tuple = FAMILIES
    grids: dict = field(default_factory=lambda: dict(DEFAULT_GRIDS))
    split_ratio: float = 0.8
    knn_k: int = 5
    smote_k: int = 5
    folds: int = 5
    plausible_features: tuple = ()
    synthetic: dict = field(default_factory=dict)
    variant: str | None = None

    def validate(self) -> "Recipe":
        if self.name not in RECIPES:
            raise InvalidRecipe(f"unknown recipe {self.name!r}; expected one of {RECIPES}")
        if self.imbalance_strategy not in STRATEGIES:
            raise InvalidRecipe(f"imbalance strategy must be one of {STRATEGIES}")
        if not self.output_dir:
            raise InvalidRecipe("output directory is required")
        needed = {"card": ("application", "credit")}.get(self.name, ("data",))
        if self.name != "synthetic":
            for key in needed:
                if not self.paths.get(key):
                    raise InvalidRecipe(f"recipe {self.name!r} needs a {key!r} path")
        bad = [f for f in self.families if f not in FAMILIES]
        if bad or not self.families:
            raise InvalidRecipe(f"unknown model families {bad}")
        missing_grid = [f for f in self.families if f not in self.grids]
        if missing_grid:
            raise InvalidRecipe(f"no grid for {missing_grid}")
        if not 0 < self.split_ratio < 1:
            raise InvalidRecipe("split ratio must lie in (0, 1)")
        return self


def make_recipe(name: str, output_dir, paths: dict | None = None, seed: int = 42,
                variant: str | None = None, **overrides) -> Recipe:
    """Recipe defaults for the bundled pipelines.

    ``credit``: drop person_age, encode, impute, SMOTE when a class reaches 60%, all four families.
    ``fraud``: random downsampling and logistic regression; ``variant="smote"`` swaps in SMOTE.
    ``card``: merge application and credit records, SMOTE, random forest.
    ``synthetic``: the credit flow on generated data with compact grids.
    """
    paths = dict(paths or {})
    out = os.fspath(output_dir)
    if name == "credit":
        r = Recipe("credit", paths, "loan_status", out, seed, drop_columns=("person_age",),
                   resample_test=True, plausible_features=(
                       "loan_grade", "loan_percent_income", "cb_person_default_on_file",
                       "loan_int_rate", "person_income", "person_home_ownership"))
    elif name == "fraud":
        strategy = "smote" if variant == "smote" else "downsample"
        r = Recipe("fraud", paths, "Class", out, seed, imbalance_strategy=strategy,
                   imbalance_trigger=None, resample_test=True, families=("logistic-regression",),
                   plausible_features=("V4", "V14", "V12", "V10", "V17", "V22", "V21", "V28", "V27"),
                   variant=variant)
    elif name == "card":
        r = Recipe("card", paths, "TARGET", out, seed, target_transform="status", drop_columns=("ID",),
                   imbalance_trigger=None, resample_test=True, families=("random-forest",),
                   plausible_features=("F_OWN_REALTY", "CODE_GENDER", "ACCOUNT_AGE", "F_OWN_CAR", "F_PHONE"))
    elif name == "synthetic":
        synth = {"n_rows": 5000, "n_numeric": 6, "n_categorical": 2, "imbalance": 0.78,
                 "signal_strength": 2.0, "missing_rate": 0.02}
        synth.update(overrides.pop("synthetic", {}) or {})
        r = Recipe("synthetic", paths, SYNTH_TARGET, out, seed, resample_test=True,
                   grids=dict(SYNTHETIC_GRIDS), synthetic=synth,
                   plausible_features=tuple(informative_features(synth["n_numeric"], seed, 3)))
    else:
        raise InvalidRecipe(f"unknown recipe {name!r}; expected one of {RECIPES}")
    if overrides:
        unknown = set(overrides) - set(Recipe.__dataclass_fields__)
        if unknown:
            raise InvalidRecipe(f"unknown recipe fields {sorted(unknown)}")
        r = replace(r, **overrides)
    return r.validate()


# data preparation ------------------------------------------------------------

def _load(path) -> tb.Table:
    try:
        return tb.load_csv(path)
    except FileMissing as exc:
        raise DataMissing(str(exc)) from exc


def merge_card_tables(application: tb.Table, credit: tb.Table, target: str = "TARGET") -> tb.Table:
    """One row per applicant: worst status ever (as the default flag) and account age in months."""
    credit = tb.map_target_status(credit, "STATUS", target)
    agg = tb.group_aggregate(credit, "ID", {"MONTHS_BALANCE": "min", target: "max"})
    age = -agg.column("MONTHS_BALANCE")
    agg = agg.with_column("MONTHS_BALANCE", age).rename({"MONTHS_BALANCE": "ACCOUNT_AGE"})
    return tb.dedupe(tb.merge_on_key(application, agg, "ID"))


def prepare_data(recipe: Recipe) -> tb.Table:
    if recipe.name == "card":
        table = merge_card_tables(_load(recipe.paths["application"]), _load(recipe.paths["credit"]), recipe.target)
    elif recipe.name == "synthetic" and not recipe.paths.get("data"):
        table = generate_synthetic_dataset(seed=recipe.seed, **recipe.synthetic)
    else:
        table = _load(recipe.paths["data"])
    if recipe.target not in table:
        raise DataMissing(f"target column {recipe.target!r} not in the data")
    return table


# crew definition -------------------------------------------------------------

def fe_steps(recipe: Recipe) -> list[dict]:
    steps = []
    if recipe.drop_columns:
        steps.append({"op": "drop", "columns": list(recipe.drop_columns)})
    steps.append({"op": "label_encode"})
    steps.append({"op": "knn_impute", "k": recipe.knn_k})
    resample = {"op": recipe.imbalance_strategy, "apply_to_test": recipe.resample_test}
    if recipe.imbalance_strategy == "smote":
        resample["k"] = recipe.smote_k
    if recipe.imbalance_trigger is not None:
        resample["trigger"] = recipe.imbalance_trigger
    steps.append(resample)
    return steps


def fe_instruction(recipe: Recipe) -> str:
    parts = []
    if recipe.drop_columns:
        parts.append(f"Drop {', '.join(recipe.drop_columns)} from both the train and the test data.")
    parts.append("Label-encode the categorical features: fit the encoders on train, then transform test.")
    parts.append(f"Fill missing values in train and test with KNN imputation (k={recipe.knn_k}) fitted on train.")
    where = "the train and test data" if recipe.resample_test else "the train data only"
    if recipe.imbalance_strategy == "smote":
        action = f"apply SMOTE oversampling (k={recipe.smote_k}) to {where}"
    else:
        action = f"apply random downsampling of the majority class to {where}"
    if recipe.imbalance_trigger is not None:
        pct = round(100 * recipe.imbalance_trigger)
        parts.append(f"Check the class proportions; if any class makes up {pct}% or more of the rows, {action}.")
    else:
        parts.append(f"Balance the classes: {action}.")
    parts.append("Save the results as train2.csv and test2.csv.")
    return " ".join(parts)


def _agents() -> list[AgentSpec]:
    def worker(role, goal, backstory, tool):
        return AgentSpec(role, goal, backstory, (tool,), allow_delegation=False, max_iterations=4)

    return [
        worker(EDA_AGENT, "Profile the dataset and report what later stages must handle.",
               "A statistician who checks every column before anyone fits a model.", "eda_tool"),
        worker(FE_AGENT, "Turn raw train and test data into model-ready tables without leakage.",
               "Has cleaned credit bureau extracts for a decade and fits every transform on train only.",
               "feature_engineering_tool"),
        worker(SELECTION_AGENT, "Choose the model family that generalises best under cross-validation.",
               "Runs grid searches for the credit analytics group.", "model_selection_tool"),
        worker(TUNING_AGENT, "Find the hyperparameters that maximise cross-validated accuracy.",
               "Maintains the team's tuning playbooks.", "tuning_tool"),
        worker(TRAINING_AGENT, "Fit the final model with the tuned hyperparameters and save it.",
               "Owns the model registry and its artifact conventions.", "training_tool"),
        worker(EVALUATION_AGENT, "Measure the trained model on held-out data.",
               "Writes the scorecards that validators read first.", "evaluation_tool"),
        worker(WRITER, "Write technical documentation covering every modeling stage.",
               "A technical writer embedded with the modeling team.", "documentation_tool"),
    ]


def build_modeling_crew(recipe: Recipe) -> CrewSpec:
    recipe.validate()
    manager = AgentSpec(MANAGER, "Run the modeling pipeline end to end through your team.",
                        "Leads a team of data scientists and engineers; delegates each stage to the right person.",
                        allow_delegation=True, max_iterations=3)
    cands = ", ".join(recipe.families)
    tasks = [
        TaskSpec("eda",
                 "Perform exploratory data analysis on {dataset_path} with target column '{target}'. "
                 "Report the shape, missing values, class imbalance, categorical features, skewed features, "
                 "outliers and notable correlations in a summarized, readable form.",
                 "An EDA summary with overview, feature analysis, descriptive statistics and correlations.",
                 EDA_AGENT),
        TaskSpec("feature_engineering",
                 "Prepare {train_path} and {test_path} (target '{target}') for modeling. " + fe_instruction(recipe),
                 "A list of the transformations applied and the shapes of train2.csv and test2.csv.",
                 FE_AGENT, ("eda",)),
        TaskSpec("model_selection",
                 f"Using train2.csv (target '{{target}}'), select the best model among: {cands}. "
                 f"Use grid search with stratified {recipe.folds}-fold cross-validation and accuracy as the score.",
                 "The selected model family with cross-validated scores and a rationale.",
                 SELECTION_AGENT, ("feature_engineering",)),
        TaskSpec("tuning",
                 "Tune the hyperparameters of the model family selected in the previous step on train2.csv "
                 "(target '{target}') over the predefined grid, and save them to hyper_params.txt.",
                 "The tuned hyperparameters.",
                 TUNING_AGENT, ("model_selection",)),
        TaskSpec("training",
                 "Train the selected model on train2.csv (target '{target}') with the hyperparameters in "
                 "hyper_params.txt and save it as model.json.",
                 "Confirmation that the model was trained and saved.",
                 TRAINING_AGENT, ("tuning",)),
        TaskSpec("evaluation",
                 "Evaluate model.json on test2.csv (target '{target}'): accuracy, precision, recall, F1, AUC and "
                 "top-decile capture rate. Save them to metrics.csv.",
                 "The evaluation metrics.",
                 EVALUATION_AGENT, ("training",)),
        TaskSpec("documentation",
                 "Write the technical documentation of all tasks performed by the team to crew_documentation.txt, "
                 "with one section per stage: " + "; ".join(STAGES) + ".",
                 "Confirmation that the documentation was written.",
                 WRITER, tuple(STAGE_TASKS)),
    ]
    return CrewSpec(tuple(_agents()), tuple(tasks), "hierarchical", manager)


_SELECTED = re.compile(r"Selected model family: (\S+)")
_TUNED = re.compile(r"Tuned family: (\S+)")


def tool_plan(recipe: Recipe) -> dict:
    """Tool inputs a well-behaved worker would send for each task."""
    t = recipe.target

    def tuning(p):
        m = _SELECTED.search(p["context"])
        family = m.group(1) if m else recipe.families[0]
        return "tuning_tool", {"train_path": "train2.csv", "target": t, "family": family,
                               "output_path": "hyper_params.txt", "folds": recipe.folds}

    def training(p):
        m = _TUNED.search(p["context"])
        family = m.group(1) if m else recipe.families[0]
        return "training_tool", {"train_path": "train2.csv", "target": t, "family": family,
                                 "hyperparams_path": "hyper_params.txt", "model_path": "model.json"}

    return {
        "eda": ("eda_tool", {"csv_path": "data/dataset.csv", "target": t}),
        "feature_engineering": ("feature_engineering_tool", {
            "train_path": "data/train.csv", "test_path": "data/test.csv", "target": t,
            "steps": fe_steps(recipe), "output_train": "train2.csv", "output_test": "test2.csv"}),
        "model_selection": ("model_selection_tool", {
            "train_path": "train2.csv", "target": t, "candidates": list(recipe.families), "folds": recipe.folds}),
        "tuning": tuning,
        "training": training,
        "evaluation": ("evaluation_tool", {"model_path": "model.json", "test_path": "test2.csv", "target": t,
                                           "metrics_path": "metrics.csv"}),
        "documentation": ("documentation_tool", {"output_path": "crew_documentation.txt"}),
    }


def template_policy(recipe: Recipe) -> TemplatePolicy:
    return TemplatePolicy(build_modeling_crew(recipe), tool_plan(recipe))


# documentation -----------------------------------------------------------------

def _read(workspace, name):
    path = os.path.join(workspace, name)
    return read_json(path) if os.path.exists(path) else None


def render_documentation_from_parts(sections: dict, workspace, recipe: Recipe | None) -> str:
    """Six-section technical document built from task outputs and the run's files."""
    empty = [STAGE_TASKS[t] for t in STAGE_TASKS if not (sections.get(t) or "").strip()]
    if empty:
        raise IncompleteCrewOutput(f"missing output for: {', '.join(empty)}")
    eda = _read(workspace, "eda_report.json") or {}
    fe = _read(workspace, "fe_report.json") or {}
    sel = _read(workspace, "selection.json") or {}
    ev = _read(workspace, "evaluation.json") or {}
    from .modeling_tools import describe_step

    name = recipe.name if recipe else "custom"
    title = f"Technical Documentation: {name} model"
    lines = [title, "=" * len(title), ""]
    if recipe is not None:
        lines += [f"Target: {recipe.target}. Seed: {recipe.seed}. Train/test split: "
                  f"{round(100 * recipe.split_ratio)}/{round(100 - 100 * recipe.split_ratio)}.", ""]

    def section(i, tid, body):
        lines.extend([f"## {i}. {STAGE_TASKS[tid]}", ""])
        lines.extend(body)
        lines.extend(["", "Team notes:", sections[tid].strip(), ""])

    shape = eda.get("shape")
    section(1, "eda", [f"Dataset shape: {shape[0]} rows x {shape[1]} columns." if shape else "Dataset shape: n/a."])
    fe_body = ["Transformations applied, in order:"]
    fe_body += [f"- {describe_step(e)}" for e in fe.get("steps", [])]
    if fe.get("train_shape"):
        fe_body.append(f"Transformed train shape: {fe['train_shape'][0]} x {fe['train_shape'][1]}; "
                       f"test shape: {fe['test_shape'][0]} x {fe['test_shape'][1]}.")
    section(2, "feature_engineering", fe_body)
    sel_body = [f"Selected family: {sel.get('family', 'n/a')}", "Cross-validation results:"]
    for row in sel.get("cv_table", []):
        hp = ", ".join(f"{k}={v}" for k, v in row["hyperparams"].items())
        sel_body.append(f"- {row['family']} ({hp}): {row['cv_accuracy']:.4f}")
    section(3, "model_selection", sel_body)
    hp_path = os.path.join(workspace, "hyper_params.txt")
    tune_body = ["Tuned hyperparameters:"]
    if os.path.exists(hp_path):
        with open(hp_path, encoding="utf-8") as fh:
            for line in fh:
                k, _, v = line.strip().partition("=")
                if k:
                    tune_body.append(f"- '{k}': {v}")
    section(4, "tuning", tune_body)
    section(5, "training", ["Model artifact: model.json (versioned JSON)."])
    metrics = ev.get("metrics", {})
    eval_body = ["Test-set metrics:"]
    for k in ("accuracy", "precision", "recall", "f1", "auc", "auc_label", "capture_rate"):
        v = metrics.get(k)
        eval_body.append(f"- {k}: {'n/a' if v is None else repr(v)}")
    imp = ev.get("importance")
    if imp:
        eval_body.append(f"Feature importance ({imp['method']}), top 10:")
        eval_body += [f"- {n}: {v:.6f}" for n, v in imp["ranking"][:10]]
    section(6, "evaluation", eval_body)
    return "\n".join(lines).rstrip() + "\n"


def render_documentation(crew_output: CrewOutput, recipe: Recipe) -> str:
    sections = {}
    for t in crew_output.task_outputs:
        sections[t.task_id] = t.raw_text
    return render_documentation_from_parts(sections, recipe.output_dir, recipe)


# running -----------------------------------------------------------------------

@dataclass
class RecipeResult:
    crew_output: CrewOutput
    report: dict
    artifacts: dict  # name -> relative path
    gateway_calls: int


def make_gateway(mode: str, transcript=None, upstream: str = "scripted", policy=None) -> Gateway:
    from .gateway import HttpBackend, RecordBackend, ReplayBackend, ScriptedBackend

    if mode == "replay":
        if transcript is None:
            raise ValueError("replay mode needs a transcript")
        return Gateway(ReplayBackend(transcript))
    if upstream == "http":
        up = HttpBackend()
    elif upstream == "scripted":
        up = ScriptedBackend(policy)
    else:
        raise ValueError(f"unknown upstream {upstream!r}")
    if mode == "record":
        if transcript is None:
            raise ValueError("record mode needs a transcript")
        return Gateway(RecordBackend(up, transcript))
    if mode == "live":
        return Gateway(up)
    raise ValueError(f"unknown mode {mode!r}")


def run_recipe(recipe: Recipe, mode: str = "live", transcript=None, upstream: str = "scripted",
               gateway: Gateway | None = None, figures: bool = True) -> RecipeResult:
    """Split the data, run the crew, and write the report files into ``recipe.output_dir``."""
    recipe.validate()
    ws = recipe.output_dir
    os.makedirs(os.path.join(ws, "data"), exist_ok=True)
    table = prepare_data(recipe)
    train, test = tb.train_test_split(table, recipe.split_ratio, recipe.seed)
    tb.write_csv(table, os.path.join(ws, "data", "dataset.csv"))
    tb.write_csv(train, os.path.join(ws, "data", "train.csv"))
    tb.write_csv(test, os.path.join(ws, "data", "test.csv"))

    spec = build_modeling_crew(recipe)
    if gateway is None:
        gateway = make_gateway(mode, transcript, upstream, TemplatePolicy(spec, tool_plan(recipe)))
    crew = build_crew(spec, modeling_catalog(), MemoryStore())
    inputs = {"dataset_path": "data/dataset.csv", "train_path": "data/train.csv",
              "test_path": "data/test.csv", "target": recipe.target, "seed": recipe.seed}
    state = {"recipe": recipe, "grids": recipe.grids}
    out = run_crew(crew, inputs, gateway, log_path=os.path.join(ws, "run_log.jsonl"), workspace=ws, state=state)

    report = build_report(recipe, out, table.shape)
    write_json(os.path.join(ws, "report.json"), report)
    artifacts = {a[0]: a[1] for a in out.artifacts}
    artifacts.update(report_json="report.json", run_log="run_log.jsonl")
    if figures:
        artifacts.update(render_figures(ws))
    return RecipeResult(out, report, artifacts, gateway.calls)


def build_report(recipe: Recipe, out: CrewOutput, dataset_shape) -> dict:
    ws = recipe.output_dir
    sel = _read(ws, "selection.json") or {}
    ev = _read(ws, "evaluation.json") or {}
    fe = _read(ws, "fe_report.json") or {}
    from .models.selection import read_hyperparams

    hp_path = os.path.join(ws, "hyper_params.txt")
    doc_path = os.path.join(ws, "crew_documentation.txt")
    doc = open(doc_path, encoding="utf-8").read() if os.path.exists(doc_path) else ""
    return {
        "recipe": recipe.name,
        "variant": recipe.variant,
        "seed": recipe.seed,
        "target": recipe.target,
        "dataset_shape": list(dataset_shape),
        "resample_test": recipe.resample_test,
        "sections": [s for s in STAGES if re.search(rf"^##\s*\d+\.\s*{re.escape(s)}\s*$", doc, re.MULTILINE)],
        "feature_engineering": fe.get("steps", []),
        "selected_family": sel.get("family"),
        "cv_table": sel.get("cv_table", []),
        "hyperparams": read_hyperparams(hp_path) if os.path.exists(hp_path) else {},
        "metrics": ev.get("metrics"),
        "importance": ev.get("importance"),
        "plausible_features": list(recipe.plausible_features),
        "crew": out.to_dict(timestamps=False),
    }


def render_figures(ws) -> dict:
    figs = {}
    ev = _read(ws, "evaluation.json")
    sel = _read(ws, "selection.json")
    d = os.path.join(ws, "figures")
    if ev:
        plotting.plot_metrics(ev["metrics"], os.path.join(d, "metrics.png"))
        plotting.plot_confusion(ev["metrics"]["confusion"], os.path.join(d, "confusion.png"))
        plotting.plot_importance(ev["importance"]["scores"], os.path.join(d, "importance.png"),
                                 ev["importance"]["method"])
        figs.update(fig_metrics="figures/metrics.png", fig_confusion="figures/confusion.png",
                    fig_importance="figures/importance.png")
    if sel:
        plotting.plot_cv_table(sel["cv_table"], os.path.join(d, "cv_accuracy.png"))
        figs["fig_cv"] = "figures/cv_accuracy.png"
    return figs
