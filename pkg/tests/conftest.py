import os
import shutil

import pytest

from fincrew.modeling_crew import make_recipe, run_recipe
from fincrew.mrm import MrmConfig, drop_doc_section, run_mrm

DATA = os.path.join(os.path.dirname(__file__), "data")
TRANSCRIPT = os.path.join(DATA, "synthetic_replay.jsonl")
SEED = 42

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE = {}


def tamper_copy(model_dir, out_dir, stage="Hyperparameter Tuning"):
    shutil.copytree(model_dir, out_dir)
    doc = os.path.join(out_dir, "crew_documentation.txt")
    with open(doc, encoding="utf-8") as fh:
        text = fh.read()
    with open(doc, "w", encoding="utf-8") as fh:
        fh.write(drop_doc_section(text, stage))
    return out_dir


@pytest.fixture(scope="session")
def transcript():
    return TRANSCRIPT


@pytest.fixture(scope="session")
def replay_run(tmp_path_factory):
    """One replayed synthetic modeling run plus its MRM run, shared by the suite."""
    root = tmp_path_factory.mktemp("replay")
    model = str(root / "model")
    res = run_recipe(make_recipe("synthetic", model, seed=SEED), "replay", TRANSCRIPT)
    mrm = run_mrm(MrmConfig(model, str(root / "mrm")), "replay", TRANSCRIPT)
    return {"root": root, "model": model, "mrm": str(root / "mrm"), "result": res, "mrm_result": mrm}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
