import json

import pytest

from fincrew.errors import EmptyContent
from fincrew.memory import TRUNCATION_MARKER, MemoryStore, jaccard, tokens


def _clock():
    t = iter(range(1000))
    return lambda: float(next(t))


def test_store_ids_and_eviction():
    s = MemoryStore(10, clock=_clock())
    ids = [s.store("a", "T1", "context", f"r{i}") for i in range(3)]
    assert ids == [1, 2, 3]
    for i in range(8):
        s.store("a", "T1", "context", f"more {i}")
    assert [r.id for r in s.records] == list(range(2, 12))
    with pytest.raises(EmptyContent):
        s.store("a", "T1", "context", "  ")
    with pytest.raises(ValueError):
        s.store("a", "T1", "chat", "x")


def test_retrieve_hand_scored():
    s = MemoryStore(clock=_clock())
    s.store("eda", "T1", "context", "hello there")
    s.store("eda", "T1", "task-output", "Two features have missing values")
    got = s.retrieve("missing values", k=2)
    # greeting: 0.5*0 + 0.5*0; report: 0.5*1 + 0.5*(2/5)
    assert [r.id for r in got] == [2, 1]
    assert jaccard(tokens("missing values"), tokens(got[0].content)) == pytest.approx(2 / 5)


def test_relevance_can_outrank_recency():
    s = MemoryStore(clock=_clock())
    s.store("x", "T", "context", "alpha")
    s.store("x", "T", "context", "missing values")
    s.store("x", "T", "context", "beta gamma")
    s.store("x", "T", "context", "delta")
    # id 2: 0.5*(1/3) + 0.5*1 = 0.667 beats id 3: 0.5*(2/3) = 0.333 and id 4: 0.5
    assert s.retrieve("missing values", k=1)[0].id == 2


def test_retrieve_filters_and_truncation():
    s = MemoryStore(clock=_clock())
    s.store("a", "T1", "context", "one")
    s.store("b", "T2", "context", "two")
    s.store("b", "T2", "tool-input", "three", entities=["loan"])
    assert {r.task_id for r in s.retrieve("one", k=5, task_id="T2")} == {"T2"}
    assert len(s.retrieve("x", k=50)) == 3
    assert [r.id for r in s.entity("loan")] == [3]
    assert s.retrieve("zzz", kind="action-input") == []
    with pytest.raises(ValueError):
        s.retrieve("q", k=0)


def test_exact_content_round_trip():
    s = MemoryStore(clock=_clock())
    for text in ("apples and pears", "model accuracy report", "stage five"):
        s.store("r", "T", "context", text)
    assert s.retrieve("model accuracy report", k=1)[0].content == "model accuracy report"


def test_build_context():
    s = MemoryStore(clock=_clock())
    s.store("eda", "EDA", "task-output", "eda text")
    assert s.build_context(["EDA"]) == "eda text"
    assert s.build_context([]) == ""
    s.store("fe", "FE", "task-output", "y" * 20)
    out = s.build_context(["EDA", "FE"], budget=15)
    assert out == ("eda text\n\n" + "y" * 20)[:15] + TRUNCATION_MARKER
    with pytest.raises(ValueError):
        s.build_context(["EDA"], budget=0)


def test_dump(tmp_path):
    s = MemoryStore(clock=_clock())
    s.store("a", "T", "context", "c")
    s.dump(tmp_path / "m.jsonl")
    rec = json.loads((tmp_path / "m.jsonl").read_text())
    assert rec["id"] == 1 and rec["kind"] == "context"
