import json

import pytest

from fincrew.errors import (
    AgentLoopExceeded,
    DuplicateRole,
    EmptyCrew,
    EmptyOutputs,
    MissingManager,
    PlaceholderMissing,
    TaskCycle,
    ToolError,
    UnknownCoworker,
    UnknownTool,
)
from fincrew.gateway import ChatResponse, Gateway, RecordBackend, ReplayBackend, ScriptedBackend, SequenceBackend
from fincrew.memory import MemoryStore
from fincrew.orchestration import (
    DELEGATE,
    AgentSpec,
    CrewSpec,
    Deps,
    RunLog,
    TaskOutput,
    TaskSpec,
    TemplatePolicy,
    Tool,
    ToolCatalog,
    aggregate,
    build_crew,
    delegate,
    parse_task_prompt,
    run_crew,
    strip_timestamps,
    task_prompt,
)

MANAGER = AgentSpec("Boss", allow_delegation=True)


def _echo(inp, ctx):
    return f"echo {inp.get('text', '')}"


def _catalog():
    return ToolCatalog([Tool("echo", "Echo Tool", "Repeats text.", _echo, {"text": "what to echo"})])


def _spec(process="hierarchical", tasks=None):
    agents = (AgentSpec("Worker A", tool_ids=("echo",)), AgentSpec("Worker B", tool_ids=("echo",)))
    tasks = tasks or (TaskSpec("T1", "Say {word}.", "echoed word", "Worker A"),
                      TaskSpec("T2", "Say again.", "echoed", "Worker B", ("T1",)))
    return CrewSpec(agents, tasks, process, MANAGER if process == "hierarchical" else None)


def _plan():
    return {"T1": ("echo", {"text": "one"}), "T2": lambda p: ("echo", {"text": p["context"]})}


def test_build_crew_validation():
    cat = _catalog()
    assert len(build_crew(_spec(), cat).spec.tasks) == 2
    with pytest.raises(EmptyCrew):
        build_crew(CrewSpec((AgentSpec("A"),), (), "hierarchical", MANAGER), cat)
    with pytest.raises(UnknownTool):
        build_crew(CrewSpec((AgentSpec("A", tool_ids=("nonexistent",)),), (TaskSpec("T", "x"),),
                            "hierarchical", MANAGER), cat)
    with pytest.raises(DuplicateRole):
        build_crew(CrewSpec((AgentSpec("A"), AgentSpec("A")), (TaskSpec("T", "x"),), "hierarchical", MANAGER), cat)
    with pytest.raises(MissingManager):
        build_crew(CrewSpec((AgentSpec("A"),), (TaskSpec("T", "x"),), "hierarchical"), cat)
    with pytest.raises(TaskCycle):
        build_crew(CrewSpec((AgentSpec("A"),), (TaskSpec("T", "x", context_task_ids=("U",)), TaskSpec("U", "y")),
                            "hierarchical", MANAGER), cat)


def test_hierarchical_run_delegates_in_order(tmp_path):
    spec = _spec()
    crew = build_crew(spec, _catalog())
    gw = Gateway(ScriptedBackend(TemplatePolicy(spec, _plan())))
    out = run_crew(crew, {"word": "hi"}, gw, log_path=tmp_path / "run.jsonl")
    assert [t.task_id for t in out.task_outputs] == ["T1", "T2"]
    assert out.delegations == [("T1", "Worker A"), ("T2", "Worker B")]
    assert out.output("T1").raw_text == "echo one"
    # T2 receives T1's output as context through memory
    assert out.output("T2").raw_text == "echo echo one"
    assert [t[0] for t in out.output("T1").tool_trace] == ["echo"]
    # manager: delegate + final; worker: tool + final
    assert gw.calls == 8
    events = [json.loads(x) for x in (tmp_path / "run.jsonl").read_text().splitlines()]
    assert events[0]["event"] == "run-start" and events[-1]["event"] == "run-end"
    assert all("_at" not in k for e in strip_timestamps(events) for k in e)


def test_sequential_replay_is_byte_identical(tmp_path):
    spec = _spec("sequential", (TaskSpec("T1", "Echo.", "x", "Worker A"),))
    policy = TemplatePolicy(spec, {"T1": ("echo", {"text": "z"})})
    record = tmp_path / "rec.jsonl"
    run_crew(build_crew(spec, _catalog()), {}, Gateway(RecordBackend(ScriptedBackend(policy), record)))
    dumps = []
    for _ in range(2):
        out = run_crew(build_crew(spec, _catalog()), {}, Gateway(ReplayBackend(record)))
        dumps.append(json.dumps(out.to_dict(timestamps=False), sort_keys=True))
    assert dumps[0] == dumps[1]
    assert len(json.loads(dumps[0])["task_outputs"]) == 1


def test_placeholder_missing():
    crew = build_crew(_spec(), _catalog())
    with pytest.raises(PlaceholderMissing):
        run_crew(crew, {}, Gateway(SequenceBackend([ChatResponse.final("x")])))


def test_immediate_final_has_empty_trace():
    spec = _spec("sequential", (TaskSpec("T1", "x", "y", "Worker A"),))
    out = run_crew(build_crew(spec, _catalog()), {}, Gateway(SequenceBackend([ChatResponse.final("done")])))
    assert out.output("T1").tool_trace == [] and out.output("T1").raw_text == "done"


def test_loop_bound_enforced():
    spec = CrewSpec((AgentSpec("A", tool_ids=("echo",), max_iterations=3),), (TaskSpec("T", "x", "y", "A"),),
                    "sequential")
    backend = SequenceBackend([ChatResponse.tool("echo", {"text": "again"})])
    with pytest.raises(AgentLoopExceeded) as err:
        run_crew(build_crew(spec, _catalog()), {}, Gateway(backend))
    assert backend.calls == 3
    assert err.value.partial.failed


def test_tool_errors_become_observations():
    def boom(inp, ctx):
        raise ToolError("bad input")

    cat = ToolCatalog([Tool("boom", "Boom", "fails", boom)])
    spec = CrewSpec((AgentSpec("A", tool_ids=("boom",)),), (TaskSpec("T", "x", "y", "A"),), "sequential")
    seen = []

    def policy(req):
        obs = [m.content for m in req.messages if m.content.startswith("Observation:")]
        if obs:
            seen.append(obs[-1])
            return ChatResponse.final("gave up")
        return ChatResponse.tool("boom", {})

    run_crew(build_crew(spec, cat), {}, Gateway(ScriptedBackend(policy)))
    assert seen == ["Observation: Tool error: bad input"]


def test_second_delegation_is_refused():
    spec = _spec(tasks=(TaskSpec("T1", "x", "y", "Worker A"),))
    crew = build_crew(spec, _catalog())
    base = TemplatePolicy(spec, {"T1": ("echo", {"text": "a"})})
    notes = []

    def policy(req):
        user = next(m.content for m in req.messages if m.role == "user")
        if parse_task_prompt(user)["agent"] == "Boss":
            obs = [m.content for m in req.messages if m.content.startswith("Observation:")]
            if len(obs) == 1:
                return ChatResponse.tool(DELEGATE, {"coworker": "Worker B", "task": "again"})
            if len(obs) == 2:
                notes.append(obs[-1])
                return ChatResponse.final("done")
        return base(req)

    out = run_crew(crew, {}, Gateway(ScriptedBackend(policy)))
    assert "already been delegated" in notes[0]
    assert out.delegations == [("T1", "Worker A")]


def test_delegate_unknown_coworker():
    spec = _spec()
    crew = build_crew(spec, _catalog())
    deps = Deps(Gateway(SequenceBackend([ChatResponse.final("x")])), MemoryStore(), crew.catalog, RunLog())
    with pytest.raises(UnknownCoworker):
        delegate(crew, spec.tasks[0], {"coworker": "Ghost", "task": "x"}, deps)
    out = delegate(crew, spec.tasks[0], {"coworker": "worker a", "task": "x"}, deps)
    assert out.agent_role == "Worker A"


def test_aggregate_order_and_artifact_dedupe():
    outs = [TaskOutput(f"T{i}", "A", str(i)) for i in range(7)]
    outs[1].artifacts.append(("model", "m.json"))
    outs[4].artifacts.append(("model v2", "m.json"))
    agg = aggregate(outs)
    assert [t.task_id for t in agg.task_outputs] == [f"T{i}" for i in range(7)]
    assert agg.artifacts == [("model v2", "m.json", "T4")]
    with pytest.raises(EmptyOutputs):
        aggregate([])


def test_task_prompt_round_trip():
    text = task_prompt("T9", "Role X", "do it", "a thing", "")
    assert parse_task_prompt(text) == {"task_id": "T9", "agent": "Role X", "task": "do it",
                                       "expected": "a thing", "context": ""}
