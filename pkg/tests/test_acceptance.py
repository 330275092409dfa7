"""Acceptance criteria, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL|SKIP`` line and the lines
are repeated in the terminal summary. Criteria 1-4 need the public datasets;
point these variables at local copies to run them:

    FINCREW_CREDIT_CSV          credit risk CSV (loan_status target)
    FINCREW_FRAUD_CSV           card transactions CSV (Class target)
    FINCREW_CARD_APPLICATION    application_record.csv
    FINCREW_CARD_CREDIT         credit_record.csv
"""

import contextlib
import os
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE, SEED, TRANSCRIPT, tamper_copy
from oracles import (
    auc_oracle,
    balanced_accuracy_oracle,
    central_difference,
    confusion_oracle,
    convex_pair,
    cv_enumeration_oracle,
    knn_impute_oracle,
)

from fincrew import cli
from fincrew import tabular as tb
from fincrew.models import estimator as est
from fincrew.models.linear import design, loss_and_grad
from fincrew.models.metrics import compute_metrics, roc_auc
from fincrew.models.selection import grid_search_select


@contextlib.contextmanager
def criterion(n, title):
    try:
        yield
    except pytest.skip.Exception as exc:
        line = f"CRITERION {n}: SKIP - {title} ({exc.msg})"
        ACCEPTANCE[n] = line
        print(line)
        raise
    except BaseException as exc:
        line = f"CRITERION {n}: FAIL - {title} ({type(exc).__name__}: {str(exc)[:200]})"
        ACCEPTANCE[n] = line
        print(line)
        raise
    line = f"CRITERION {n}: PASS - {title}"
    ACCEPTANCE[n] = line
    print(line)


def _env(name):
    path = os.environ.get(name)
    if not path or not os.path.exists(path):
        pytest.skip(f"set {name} to run")
    return path


# 1-4: banded reproduction on user-supplied data -------------------------------

def test_criterion_01_credit_banded(tmp_path):
    from fincrew.modeling_crew import make_recipe, run_recipe

    with criterion(1, "credit recipe selects GBT(0.1, 5, 200), accuracy in [0.90, 0.99], < 5 min"):
        path = _env("FINCREW_CREDIT_CSV")
        t0 = time.perf_counter()
        res = run_recipe(make_recipe("credit", tmp_path, {"data": path}, seed=42), figures=False)
        elapsed = time.perf_counter() - t0
        rep = res.report
        assert rep["selected_family"] == "gradient-boosting", rep["selected_family"]
        assert rep["hyperparams"] == {"learning_rate": 0.1, "max_depth": 5, "n_estimators": 200}, rep["hyperparams"]
        assert 0.90 <= rep["metrics"]["accuracy"] <= 0.99, rep["metrics"]["accuracy"]
        assert elapsed < 300, elapsed


def test_criterion_02_fraud_banded(tmp_path):
    from fincrew.modeling_crew import make_recipe, run_recipe

    with criterion(2, "fraud downsample+LR in [0.89, 0.97]; SMOTE variant in [0.93, 0.99]"):
        path = _env("FINCREW_FRAUD_CSV")
        down = run_recipe(make_recipe("fraud", tmp_path / "down", {"data": path}, seed=42), figures=False)
        sm = run_recipe(make_recipe("fraud", tmp_path / "smote", {"data": path}, seed=42, variant="smote"),
                        figures=False)
        assert 0.89 <= down.report["metrics"]["accuracy"] <= 0.97, down.report["metrics"]["accuracy"]
        assert 0.93 <= sm.report["metrics"]["accuracy"] <= 0.99, sm.report["metrics"]["accuracy"]


def test_criterion_03_card_banded(tmp_path):
    from fincrew.modeling_crew import make_recipe, merge_card_tables, run_recipe

    with criterion(3, "card merge is 36,457 x 20; RF accuracy in [0.90, 0.99]"):
        app = _env("FINCREW_CARD_APPLICATION")
        cred = _env("FINCREW_CARD_CREDIT")
        merged = merge_card_tables(tb.load_csv(app), tb.load_csv(cred))
        assert merged.shape == (36457, 20), merged.shape
        res = run_recipe(make_recipe("card", tmp_path, {"application": app, "credit": cred}, seed=42),
                         figures=False)
        assert 0.90 <= res.report["metrics"]["accuracy"] <= 0.99, res.report["metrics"]["accuracy"]


def test_criterion_04_credit_degradation(tmp_path):
    from fincrew.modeling_crew import make_recipe, run_recipe
    from fincrew.mrm import MrmConfig, run_mrm

    with criterion(4, "credit: shifted accuracy <= baseline - 0.02; outlier change <= 1/n_test"):
        path = _env("FINCREW_CREDIT_CSV")
        run_recipe(make_recipe("credit", tmp_path / "model", {"data": path}, seed=42), figures=False)
        out = run_mrm(MrmConfig(str(tmp_path / "model"), str(tmp_path / "mrm")), figures=False).result["outcome"]
        base, shifted, outlier = (out[k]["accuracy"] for k in ("baseline", "shifted", "outlier"))
        assert shifted <= base - 0.02, (base, shifted)
        assert abs(outlier - base) <= 1 / out["settings"]["n_test"] + 1e-12, (base, outlier)


# 5-9: oracle suites --------------------------------------------------------

# twenty fixed vectors with their confusion counts worked out by hand: (y_true, y_pred, (tp, fp, tn, fn))
FIXED = [
    ([1, 0], [1, 0], (1, 0, 1, 0)),
    ([1, 0], [0, 1], (0, 1, 0, 1)),
    ([1, 1, 1], [1, 1, 1], (3, 0, 0, 0)),
    ([0, 0, 0], [0, 0, 0], (0, 0, 3, 0)),
    ([0, 0, 0], [1, 1, 0], (0, 2, 1, 0)),
    ([1, 1, 0, 0], [1, 0, 1, 0], (1, 1, 1, 1)),
    ([1, 1, 1, 0], [0, 0, 0, 0], (0, 0, 1, 3)),
    ([0, 1, 0, 1, 0], [0, 1, 1, 1, 0], (2, 1, 2, 0)),
    ([1, 0, 1, 0, 1], [1, 1, 1, 1, 1], (3, 2, 0, 0)),
    ([1, 0, 0, 0, 0, 1], [0, 0, 0, 0, 0, 1], (1, 0, 4, 1)),
    ([1, 1, 1, 1, 0, 0], [1, 1, 0, 0, 0, 1], (2, 1, 1, 2)),
    ([0, 1, 1, 0, 1, 0, 1], [0, 1, 0, 0, 1, 1, 1], (3, 1, 2, 1)),
    ([1, 0, 1, 1, 0, 0, 0], [1, 0, 1, 1, 0, 0, 0], (3, 0, 4, 0)),
    ([1, 0, 1, 1, 0, 0, 0], [0, 1, 0, 0, 1, 1, 1], (0, 4, 0, 3)),
    ([0, 0, 0, 0, 0, 0, 0, 1], [0, 0, 0, 1, 0, 0, 0, 1], (1, 1, 6, 0)),
    ([1, 1, 0, 0, 1, 1, 0, 0], [1, 0, 1, 0, 1, 0, 1, 0], (2, 2, 2, 2)),
    ([1, 0, 0, 1, 0, 1, 1, 0, 1], [1, 0, 1, 1, 0, 0, 1, 0, 0], (3, 1, 3, 2)),
    ([0, 1, 0, 1, 0, 1, 0, 1, 0, 1], [0, 0, 0, 0, 0, 1, 1, 1, 1, 1], (3, 2, 3, 2)),
    ([1, 1, 1, 1, 1, 0, 0, 0, 0, 0], [1, 1, 1, 1, 0, 0, 0, 0, 0, 1], (4, 1, 4, 1)),
    ([0, 0, 1, 1, 1, 1, 1, 1, 0, 0], [1, 1, 1, 1, 1, 1, 1, 1, 1, 1], (6, 4, 0, 0)),
]


def _all_auc_cases():
    rng = np.random.default_rng(7)
    for n in range(2, 9):
        for bits in range(1, 2 ** n - 1):
            y = [(bits >> i) & 1 for i in range(n)]
            if n <= 5:
                score_sets = [list(s) for s in np.ndindex(*(3,) * n)]
            else:
                score_sets = [list(rng.integers(0, 4, size=n)) for _ in range(8)]
                score_sets += [list(rng.random(n)) for _ in range(4)]
            for s in score_sets:
                yield y, s


def test_criterion_05_metric_oracles():
    with criterion(5, "metrics vs hand confusions, exhaustive AUC oracle, auc_label == balanced accuracy"):
        assert len(FIXED) == 20
        for y, p, expect in FIXED:
            assert confusion_oracle(y, p) == expect
            rep = compute_metrics(y, p)
            assert rep.confusion == expect, (y, p)
            tp, fp, tn, fn = expect
            assert rep.accuracy == (tp + tn) / len(y)
            assert rep.precision == (tp / (tp + fp) if tp + fp else 0.0)
            assert rep.recall == (tp / (tp + fn) if tp + fn else 0.0)
        cases = 0
        for y, s in _all_auc_cases():
            assert abs(roc_auc(y, s) - auc_oracle(y, s)) <= 1e-12, (y, s)
            cases += 1
        assert cases > 10_000
        rng = np.random.default_rng(11)
        for _ in range(100):
            n = int(rng.integers(4, 60))
            y = rng.integers(0, 2, size=n)
            y[0], y[1] = 0, 1
            p = rng.integers(0, 2, size=n)
            rep = compute_metrics(y, p)
            assert abs(rep.auc_label - balanced_accuracy_oracle(y.tolist(), p.tolist())) <= 1e-12


def _numeric_table(rng, n_maj, n_min, d=3):
    X = np.vstack([rng.normal(size=(n_maj, d)), rng.normal(2.0, 1.0, size=(n_min, d))])
    y = np.r_[np.zeros(n_maj), np.ones(n_min)]
    cols = {f"f{j}": X[:, j] for j in range(d)}
    cols["t"] = y
    return tb.Table.from_columns(cols)


def test_criterion_06_resampling_invariants():
    with criterion(6, "SMOTE balance + convex combinations (tol 1e-9); downsample = 2 x minority; seeded"):
        rng = np.random.default_rng(3)
        for trial in range(10):
            n_maj, n_min = int(rng.integers(15, 40)), int(rng.integers(3, 10))
            table = _numeric_table(rng, n_maj, n_min)
            out = tb.smote(table, "t", k=int(rng.integers(1, 6)), seed=trial)
            props = tb.class_proportions(out, "t")
            assert props[0] == props[1] == 0.5
            assert out.take(range(table.n_rows)).equals(table)
            feats = ["f0", "f1", "f2"]
            minority = table.to_matrix(feats)[table.column("t") == 1]
            synth = out.to_matrix(feats)[table.n_rows:]
            assert len(synth) == n_maj - n_min
            for row in synth:
                assert convex_pair(row, minority, tol=1e-9) is not None, row
            assert tb.smote(table, "t", seed=trial).equals(tb.smote(table, "t", seed=trial))
            down = tb.random_downsample(table, "t", seed=trial)
            assert down.n_rows == 2 * n_min
            assert tb.class_proportions(down, "t") == {0: 0.5, 1: 0.5}
            assert down.equals(tb.random_downsample(table, "t", seed=trial))


def test_criterion_07_knn_imputation_oracle():
    with criterion(7, "KNN imputation equals brute-force neighbour oracle on 50 random tables"):
        rng = np.random.default_rng(5)
        for trial in range(50):
            n = int(rng.integers(8, 31))
            d = int(rng.integers(2, 5))
            k = int(rng.integers(1, 5))
            names = [f"c{j}" for j in range(d)]
            data = rng.integers(0, 10, size=(n, d)).astype(float) if trial % 2 else rng.normal(size=(n, d))
            mask = rng.random((n, d)) < 0.2
            mask[: k + 1] = False  # keep enough complete reference rows
            data[mask] = np.nan
            train = tb.Table.from_columns({c: data[:, j] for j, c in enumerate(names)})
            query_data = rng.normal(size=(6, d))
            query_data[rng.random((6, d)) < 0.4] = np.nan
            query = tb.Table.from_columns({c: query_data[:, j] for j, c in enumerate(names)})
            for table in (train, query):
                got = tb.knn_impute(train, table, k=k)
                want = knn_impute_oracle({c: train.column(c) for c in names},
                                         {c: table.column(c) for c in names}, names, k)
                for c in names:
                    assert np.array_equal(got.column(c), want[c]), (trial, c)
                    keep = ~np.isnan(table.column(c))
                    assert np.array_equal(got.column(c)[keep], table.column(c)[keep])


def test_criterion_08_grid_search_oracle():
    with criterion(8, "grid search equals exhaustive CV enumeration on 20 random instances"):
        rng = np.random.default_rng(8)
        families = {
            "logistic-regression": {"l2": [0.0, 0.5, 5.0]},
            "decision-tree": {"max_depth": [1, 2, 4]},
            "random-forest": {"n_estimators": [1, 3, 6], "max_depth": [2, 3]},
            "gradient-boosting": {"learning_rate": [0.1, 0.5], "n_estimators": [2, 5], "max_depth": [1, 2]},
        }
        for trial in range(20):
            n = int(rng.integers(20, 51))
            X = rng.normal(size=(n, 3))
            y = (X[:, 0] + 0.7 * rng.normal(size=n) > 0).astype(int)
            y[:3], y[3:6] = 0, 1
            picks = rng.choice(list(families), size=int(rng.integers(1, 3)), replace=False)
            cands, budget = [], 8
            for fam in picks:
                grid = families[fam]
                keys = list(grid)
                combos = 1
                for key in keys:
                    combos *= len(grid[key])
                while combos > budget:
                    key = max(keys, key=lambda q: len(grid[q]))
                    grid = {**grid, key: grid[key][:-1]}
                    combos = int(np.prod([len(v) for v in grid.values()]))
                cands.append((fam, grid))
                budget -= combos
                if budget <= 0:
                    break
            res = grid_search_select(cands, X, y, folds=3, seed=trial)
            best, table = cv_enumeration_oracle(cands, X, y, 3, trial)
            assert res.family == best[0]
            assert est.resolve_hyperparams(best[0], best[1]) == res.hyperparams
            assert [r["cv_accuracy"] for r in res.cv_table] == [t[2] for t in table]


def test_criterion_09_logistic_numerics():
    with criterion(9, "LR gradient vs central differences (rel err < 1e-5); monotone training loss"):
        rng = np.random.default_rng(9)
        for _ in range(10):
            n, d = int(rng.integers(20, 80)), int(rng.integers(1, 6))
            A = design(rng.normal(size=(n, d)))
            y = (rng.random(n) < 0.4).astype(float)
            w = rng.normal(size=d + 1)
            l2 = float(rng.choice([0.0, 0.3, 2.0]))
            _, g = loss_and_grad(w, A, y, l2)
            fd = central_difference(lambda v: loss_and_grad(v, A, y, l2)[0], w)
            rel = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)
            assert rel < 1e-5, rel
            trace = []
            est.fit("logistic-regression", {"l2": l2}, A[:, :-1], y.astype(int), loss_trace=trace)
            assert len(trace) > 1
            assert all(b <= a for a, b in zip(trace, trace[1:]))


# 10-11: hermetic end-to-end --------------------------------------------------

def _no_network(monkeypatch):
    import httpx

    def refuse(*a, **k):
        raise AssertionError("network access attempted during a replay run")

    monkeypatch.setattr(httpx.Client, "send", refuse)
    monkeypatch.setattr(httpx, "post", refuse)


def _end_to_end(root):
    from fincrew.modeling_crew import make_recipe, run_recipe
    from fincrew.mrm import MrmConfig, run_mrm

    model, mrm = os.path.join(root, "model"), os.path.join(root, "mrm")
    res = run_recipe(make_recipe("synthetic", model, seed=SEED), "replay", TRANSCRIPT)
    out = run_mrm(MrmConfig(model, mrm), "replay", TRANSCRIPT)
    return model, mrm, res, out


def test_criterion_10_hermetic_end_to_end(tmp_path, monkeypatch, capsys):
    from fincrew.modeling_tools import STAGES

    with criterion(10, "replayed synthetic run: six headings, compliant, zero deltas, shifted < baseline, "
                       "tampered doc -> gaps-found and exit 1, < 60 s"):
        _no_network(monkeypatch)
        t0 = time.perf_counter()
        model, mrm, res, out = _end_to_end(str(tmp_path))
        assert res.report["dataset_shape"] == [5000, 9]
        props = tb.class_proportions(tb.load_csv(os.path.join(model, "data", "dataset.csv")), "default")
        assert abs(props[0] - 0.78) <= 0.01
        with open(os.path.join(model, "crew_documentation.txt"), encoding="utf-8") as fh:
            doc = fh.read()
        for i, stage in enumerate(STAGES, 1):
            assert f"## {i}. {stage}" in doc
        r = out.result
        assert r["compliance"]["verdict"] == "compliant"
        assert r["replication"]["verdict"] == "replicated"
        assert all(d == 0 for d in r["replication"]["deltas"].values())
        assert r["outcome"]["shifted"]["accuracy"] < r["outcome"]["baseline"]["accuracy"]
        assert out.verdict == "pass"

        bad = tamper_copy(model, str(tmp_path / "tampered"))
        code = cli.main(["mrm", "run", "--model-dir", bad, "--output", str(tmp_path / "mrm_bad"),
                         "--mode", "replay", "--transcript", TRANSCRIPT, "--no-figures"])
        captured = capsys.readouterr()
        assert "compliance\tgaps-found" in captured.out
        assert "Hyperparameter Tuning" in captured.err
        assert code == 1
        elapsed = time.perf_counter() - t0
        assert elapsed < 60, elapsed


def test_criterion_11_replay_determinism(tmp_path, monkeypatch):
    with criterion(11, "two replay runs give byte-identical structured outputs"):
        _no_network(monkeypatch)
        a_model, a_mrm, _, _ = _end_to_end(str(tmp_path / "a"))
        b_model, b_mrm, _, _ = _end_to_end(str(tmp_path / "b"))
        assert cli.compare_runs(a_model, b_model, cli.MODEL_OUTPUTS) == []
        assert cli.compare_runs(a_mrm, b_mrm, cli.MRM_OUTPUTS) == []
