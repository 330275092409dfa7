import json
import os

import pytest

from fincrew import tabular as tb
from fincrew.errors import DataMissing, IncompleteCrewOutput, InvalidRecipe
from fincrew.modeling_crew import (
    EDA_AGENT,
    FE_AGENT,
    MANAGER,
    build_modeling_crew,
    make_recipe,
    merge_card_tables,
    render_documentation,
    render_documentation_from_parts,
    run_recipe,
)
from fincrew.modeling_tools import STAGES, modeling_catalog
from fincrew.orchestration import build_crew

ORDER = ["eda", "feature_engineering", "model_selection", "tuning", "training", "evaluation", "documentation"]


def test_recipes_bake_in_their_strategies(tmp_path):
    credit = build_modeling_crew(make_recipe("credit", tmp_path, {"data": "x.csv"}))
    fe = credit.tasks[1].description
    assert "KNN imputation" in fe and "60% or more" in fe and "SMOTE" in fe
    fraud = build_modeling_crew(make_recipe("fraud", tmp_path, {"data": "x.csv"}))
    assert "random downsampling" in fraud.tasks[1].description
    card = build_modeling_crew(make_recipe("card", tmp_path, {"application": "a.csv", "credit": "c.csv"}))
    assert "SMOTE" in card.tasks[1].description and "train and test data" in card.tasks[1].description
    assert "SMOTE" in build_modeling_crew(
        make_recipe("fraud", tmp_path, {"data": "x.csv"}, variant="smote")).tasks[1].description


def test_modeling_crew_shape(tmp_path):
    spec = build_modeling_crew(make_recipe("synthetic", tmp_path))
    crew = build_crew(spec, modeling_catalog())
    assert len(spec.agents) + 1 == 8 and len(spec.tasks) == 7
    assert [t.id for t in crew.spec.tasks] == ORDER
    assert crew.manager.role == MANAGER and crew.manager.allow_delegation
    assert not any(a.allow_delegation for a in spec.agents)
    assert spec.tasks[0].assigned_agent == EDA_AGENT and spec.tasks[1].assigned_agent == FE_AGENT


def test_invalid_recipes(tmp_path):
    with pytest.raises(InvalidRecipe):
        make_recipe("mortgage", tmp_path)
    with pytest.raises(InvalidRecipe):
        make_recipe("credit", tmp_path)
    with pytest.raises(InvalidRecipe):
        make_recipe("synthetic", tmp_path, imbalance_strategy="oversample")
    with pytest.raises(InvalidRecipe):
        make_recipe("synthetic", tmp_path, families=("svm",))


def test_missing_csv_is_data_missing(tmp_path):
    recipe = make_recipe("credit", tmp_path / "out", {"data": str(tmp_path / "absent.csv")})
    with pytest.raises(DataMissing):
        run_recipe(recipe, figures=False)


def test_merge_card_tables():
    app = tb.Table.from_columns({"ID": [1, 2, 3], "F_OWN_CAR": ["Y", "N", "Y"]})
    credit = tb.Table.from_columns({"ID": [1, 1, 2, 2, 3], "MONTHS_BALANCE": [0.0, -5.0, -2.0, -1.0, 0.0],
                                    "STATUS": ["C", "2", "X", "0", "C"]})
    out = merge_card_tables(app, credit)
    assert out.column("ID").tolist() == [1, 2, 3]
    assert out.column("ACCOUNT_AGE").tolist() == [5.0, 2.0, 0.0]
    assert out.column("TARGET").tolist() == [1.0, 0.0, 0.0]


def test_replayed_run_artifacts(replay_run):
    res = replay_run["result"]
    out = res.crew_output
    assert [t.task_id for t in out.task_outputs] == ORDER
    assert len(out.delegations) == 7
    for name in ("train2.csv", "test2.csv", "model.json", "hyper_params.txt", "crew_documentation.txt",
                 "metrics.csv", "report.json", "figures/metrics.png", "figures/cv_accuracy.png"):
        assert os.path.exists(os.path.join(replay_run["model"], name)), name
    assert res.report["sections"] == list(STAGES)
    assert set(res.report["metrics"]) >= {"accuracy", "precision", "recall", "f1", "auc", "auc_label"}
    report = json.load(open(os.path.join(replay_run["model"], "report.json")))
    assert report["selected_family"] == res.report["selected_family"]


def test_documentation_is_pure_and_complete(replay_run):
    res = replay_run["result"]
    recipe = make_recipe("synthetic", replay_run["model"], seed=42)
    a = render_documentation(res.crew_output, recipe)
    assert a == render_documentation(res.crew_output, recipe)
    for i, stage in enumerate(STAGES, 1):
        assert f"## {i}. {stage}" in a
    assert "'learning_rate': 0.1" in a
    sections = {t.task_id: t.raw_text for t in res.crew_output.task_outputs}
    sections["tuning"] = ""
    with pytest.raises(IncompleteCrewOutput):
        render_documentation_from_parts(sections, replay_run["model"], recipe)
