"""Record the replay transcript used by the hermetic end-to-end tests.

Runs the synthetic modeling recipe, the MRM crew on its output, and the MRM
crew again on a copy whose documentation lacks one stage section. All three
runs go through a recording gateway backed by the scripted policy, so the
transcript holds every request the tests will replay.

    python3 scripts/record_replay.py tests/data/synthetic_replay.jsonl
"""

import os
import shutil
import sys
import tempfile

from fincrew.modeling_crew import make_recipe, run_recipe
from fincrew.mrm import MrmConfig, drop_doc_section, run_mrm

SEED = 42
TAMPERED_STAGE = "Hyperparameter Tuning"


def tamper(model_dir, out_dir, stage=TAMPERED_STAGE):
    shutil.copytree(model_dir, out_dir)
    doc = os.path.join(out_dir, "crew_documentation.txt")
    with open(doc, encoding="utf-8") as fh:
        text = fh.read()
    with open(doc, "w", encoding="utf-8") as fh:
        fh.write(drop_doc_section(text, stage))
    return out_dir


def record(path):
    if os.path.exists(path):
        os.remove(path)
    with tempfile.TemporaryDirectory() as tmp:
        model = os.path.join(tmp, "model")
        res = run_recipe(make_recipe("synthetic", model, seed=SEED), "record", path, figures=False)
        mrm = run_mrm(MrmConfig(model, os.path.join(tmp, "mrm")), "record", path, figures=False)
        bad = tamper(model, os.path.join(tmp, "model_tampered"))
        tampered = run_mrm(MrmConfig(bad, os.path.join(tmp, "mrm_tampered")), "record", path, figures=False)
    print(f"modeling calls {res.gateway_calls}, mrm calls {mrm.gateway_calls} ({mrm.verdict}), "
          f"tampered mrm calls {tampered.gateway_calls} ({tampered.verdict})")


if __name__ == "__main__":
    record(sys.argv[1] if len(sys.argv) > 1 else "tests/data/synthetic_replay.jsonl")
