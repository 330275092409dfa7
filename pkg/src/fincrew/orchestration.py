"""Crew runtime: definitions, validation, agent loop and hierarchical delegation."""

from __future__ import annotations

import hashlib
import json
import re
import string
import time
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import (
    AgentLoopExceeded,
    CrewDefinitionError,
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
from .gateway import ChatRequest, ChatResponse, Gateway, Message
from .memory import MemoryStore

DELEGATE = "delegate"
CONTEXT_BUDGET = 8000


# definitions ---------------------------------------------------------------

@dataclass(frozen=True)
class AgentSpec:
    role: str
    goal: str = ""
    backstory: str = ""
    tool_ids: tuple = ()
    allow_delegation: bool = False
    max_iterations: int = 5

    def __post_init__(self):
        if not self.role.strip():
            raise CrewDefinitionError("agent role must be nonempty")
        if self.max_iterations < 1:
            raise CrewDefinitionError("max_iterations must be >= 1")
        object.__setattr__(self, "tool_ids", tuple(self.tool_ids))


@dataclass(frozen=True)
class TaskSpec:
    id: str
    description: str
    expected_output: str = ""
    assigned_agent: str | None = None
    context_task_ids: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "context_task_ids", tuple(self.context_task_ids))


@dataclass(frozen=True)
class CrewSpec:
    agents: tuple
    tasks: tuple
    process: str = "hierarchical"
    manager: AgentSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "tasks", tuple(self.tasks))


@dataclass
class ToolResult:
    text: str
    artifacts: list = field(default_factory=list)  # (name, relative path)


@dataclass
class ToolContext:
    """What a tool sees while it runs."""

    workspace: Any
    inputs: dict
    state: dict
    memory: MemoryStore
    task_id: str
    agent_role: str


@dataclass(frozen=True)
class Tool:
    tool_id: str
    name: str
    description: str
    func: Callable[[dict, ToolContext], Any]
    input_fields: dict = field(default_factory=dict)


class ToolCatalog:
    def __init__(self, tools=()):
        self._tools: dict[str, Tool] = {}
        for t in tools:
            self.add(t)

    def add(self, tool: Tool) -> None:
        self._tools[tool.tool_id] = tool

    def __contains__(self, tool_id) -> bool:
        return tool_id in self._tools

    def get(self, tool_id: str) -> Tool:
        return self._tools[tool_id]

    def resolve(self, name: str) -> Tool | None:
        """Look a tool up by id, then by display name (case-insensitive)."""
        if name in self._tools:
            return self._tools[name]
        low = name.strip().lower()
        for t in self._tools.values():
            if t.name.lower() == low or t.tool_id.lower() == low:
                return t
        return None


# outputs -------------------------------------------------------------------

def digest(value) -> str:
    if not isinstance(value, str):
        value = json.dumps(value, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(value.encode("utf-8")).hexdigest()[:16]


@dataclass
class TaskOutput:
    task_id: str
    agent_role: str
    raw_text: str
    artifacts: list = field(default_factory=list)
    tool_trace: list = field(default_factory=list)  # (tool_id, input digest, output digest)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "agent_role": self.agent_role,
            "raw_text": self.raw_text,
            "artifacts": [list(a) for a in self.artifacts],
            "tool_trace": [list(t) for t in self.tool_trace],
        }


@dataclass
class CrewOutput:
    task_outputs: list
    started_at: float
    finished_at: float
    failed: bool = False
    delegations: list = field(default_factory=list)  # (task_id, coworker)
    artifacts: list = field(default_factory=list)  # (name, path, last writer task_id)

    def to_dict(self, timestamps: bool = True) -> dict:
        d = {
            "failed": self.failed,
            "task_outputs": [t.to_dict() for t in self.task_outputs],
            "delegations": [list(x) for x in self.delegations],
            "artifacts": [list(a) for a in self.artifacts],
        }
        if timestamps:
            d["started_at"] = self.started_at
            d["finished_at"] = self.finished_at
        return d

    def output(self, task_id: str) -> TaskOutput:
        for t in self.task_outputs:
            if t.task_id == task_id:
                return t
        raise KeyError(task_id)


def aggregate(outputs, started_at: float = 0.0, finished_at: float = 0.0, failed: bool = False,
              delegations=()) -> CrewOutput:
    outputs = list(outputs)
    if not outputs and not failed:
        raise EmptyOutputs("no task outputs to aggregate")
    index: dict[str, list] = {}
    for out in outputs:
        for name, path in out.artifacts:
            if path in index:
                index[path][0] = name
                index[path][2] = out.task_id
            else:
                index[path] = [name, path, out.task_id]
    return CrewOutput(outputs, started_at, finished_at, failed, list(delegations),
                      [tuple(v) for v in index.values()])


# validation ----------------------------------------------------------------

def placeholders(template: str) -> set[str]:
    names = set()
    for _, name, _, _ in string.Formatter().parse(template):
        if name:
            names.add(re.split(r"[.\[]", name, maxsplit=1)[0])
    return names


class Crew:
    def __init__(self, spec: CrewSpec, catalog: ToolCatalog, memory: MemoryStore):
        self.spec = spec
        self.catalog = catalog
        self.memory = memory
        self.agents = {a.role: a for a in spec.agents}

    @property
    def manager(self) -> AgentSpec | None:
        return self.spec.manager

    def coworker(self, role: str) -> AgentSpec:
        if role in self.agents:
            return self.agents[role]
        low = role.strip().lower()
        for name, agent in self.agents.items():
            if name.lower() == low:
                return agent
        raise UnknownCoworker(f"no coworker named {role!r}; available: {sorted(self.agents)}")


def build_crew(spec: CrewSpec, catalog: ToolCatalog, memory: MemoryStore | None = None) -> Crew:
    if not spec.tasks or not spec.agents:
        raise EmptyCrew("a crew needs at least one agent and one task")
    if spec.process not in ("hierarchical", "sequential"):
        raise CrewDefinitionError(f"unknown process {spec.process!r}")
    roles = [a.role for a in spec.agents]
    if spec.manager is not None:
        roles.append(spec.manager.role)
    dup = sorted({r for r in roles if roles.count(r) > 1})
    if dup:
        raise DuplicateRole(f"duplicate agent roles: {dup}")
    if spec.process == "hierarchical" and spec.manager is None:
        raise MissingManager("hierarchical crews need a manager")
    for agent in list(spec.agents) + ([spec.manager] if spec.manager else []):
        for tid in agent.tool_ids:
            if tid not in catalog:
                raise UnknownTool(f"agent {agent.role!r} references unknown tool {tid!r}")
    agent_roles = {a.role for a in spec.agents}
    seen: set[str] = set()
    for task in spec.tasks:
        if task.id in seen:
            raise CrewDefinitionError(f"duplicate task id {task.id!r}")
        for dep in task.context_task_ids:
            if dep not in seen:
                raise TaskCycle(f"task {task.id!r} depends on {dep!r}, which does not run before it")
        if task.assigned_agent is not None and task.assigned_agent not in agent_roles:
            raise CrewDefinitionError(f"task {task.id!r} is assigned to unknown agent {task.assigned_agent!r}")
        if spec.process == "sequential" and task.assigned_agent is None:
            raise CrewDefinitionError(f"sequential task {task.id!r} needs an assigned agent")
        seen.add(task.id)
    return Crew(spec, catalog, memory if memory is not None else MemoryStore())


# prompts -------------------------------------------------------------------

ENVELOPE_HELP = (
    'Reply with exactly one JSON object. To use a tool: {"action": "tool", "tool": "<tool id>", '
    '"input": {...}}. When you are done: {"action": "final", "answer": "<your answer>"}.'
)
OBSERVATION = "Observation:"


def system_prompt(agent: AgentSpec, tools: list[Tool]) -> str:
    lines = [f"You are {agent.role}.", f"Goal: {agent.goal}", f"Backstory: {agent.backstory}", "", "Tools:"]
    if not tools:
        lines.append("- none")
    for t in tools:
        fields = ", ".join(f"{k} ({v})" for k, v in t.input_fields.items()) or "no input"
        lines.append(f"- {t.tool_id}: {t.description} Input: {fields}")
    lines += ["", ENVELOPE_HELP]
    return "\n".join(lines)


def task_prompt(task_id: str, role: str, task_text: str, expected: str, context: str) -> str:
    return (
        f"[task:{task_id}] [agent:{role}]\n"
        f"Task:\n{task_text}\n\n"
        f"Expected output:\n{expected}\n\n"
        f"Context:\n{context or '(none)'}"
    )


_HEADER = re.compile(r"^\[task:(?P<task>[^\]]+)\] \[agent:(?P<agent>[^\]]+)\]")


def parse_task_prompt(text: str) -> dict:
    """Inverse of :func:`task_prompt`."""
    m = _HEADER.match(text)
    if m is None:
        raise ValueError("not a task prompt")
    body = text[m.end():]
    task = body.split("\nTask:\n", 1)[1]
    task, rest = task.split("\n\nExpected output:\n", 1)
    expected, context = rest.split("\n\nContext:\n", 1)
    return {"task_id": m["task"], "agent": m["agent"], "task": task, "expected": expected,
            "context": "" if context == "(none)" else context}


def observations(request: ChatRequest) -> list[str]:
    return [m.content[len(OBSERVATION):].lstrip() for m in request.messages
            if m.role == "user" and m.content.startswith(OBSERVATION)]


def _envelope(resp: ChatResponse) -> str:
    if resp.kind == "final":
        return json.dumps({"action": "final", "answer": resp.text})
    return json.dumps({"action": "tool", "tool": resp.tool_id, "input": resp.tool_input}, sort_keys=True)


# runtime -------------------------------------------------------------------

class RunLog:
    """One JSON record per line; only the first and last lines carry wall-clock time."""

    def __init__(self, path=None):
        self.path = path
        self.events: list[dict] = []
        if path is not None:
            open(path, "w", encoding="utf-8").close()

    def emit(self, **event) -> None:
        self.events.append(event)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event, sort_keys=True, ensure_ascii=False) + "\n")


@dataclass
class Deps:
    gateway: Gateway
    memory: MemoryStore
    catalog: ToolCatalog
    log: RunLog
    workspace: Any = None
    inputs: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)


@dataclass
class _Delegation:
    crew: Crew
    task: TaskSpec
    done: list = field(default_factory=list)  # (coworker, TaskOutput)


def _dispatch(tool: Tool, tool_input: dict, ctx: ToolContext) -> ToolResult:
    result = tool.func(tool_input, ctx)
    if isinstance(result, str):
        result = ToolResult(result)
    return result


def execute_task(agent: AgentSpec, task_id: str, task_text: str, expected: str, context: str,
                 deps: Deps, delegation: _Delegation | None = None) -> TaskOutput:
    """Run one agent loop until a final answer or ``max_iterations`` gateway calls."""
    tools = [deps.catalog.get(t) for t in agent.tool_ids]
    if delegation is not None:
        tools = [delegation_tool(sorted(delegation.crew.agents))] + tools
    by_id = {t.tool_id: t for t in tools}
    messages = [
        Message("system", system_prompt(agent, tools)),
        Message("user", task_prompt(task_id, agent.role, task_text, expected, context)),
    ]
    trace, artifacts = [], []
    for _ in range(agent.max_iterations):
        resp = deps.gateway.complete(ChatRequest(tuple(messages)))
        if resp.kind == "final":
            return TaskOutput(task_id, agent.role, resp.text, artifacts, trace)
        tool = by_id.get(resp.tool_id)
        if tool is None and delegation is None:
            found = deps.catalog.resolve(resp.tool_id)
            tool = found if found is not None and found.tool_id in by_id else None
        in_digest = digest(resp.tool_input)
        if tool is None:
            observation = f"Tool error: {resp.tool_id!r} is not one of your tools ({', '.join(by_id)})."
        elif tool.tool_id == DELEGATE and delegation is not None:
            kind = "action-input"
            deps.memory.store(agent.role, task_id, kind, json.dumps(resp.tool_input, sort_keys=True))
            try:
                observation = _delegate(delegation, resp.tool_input, deps)
            except ToolError as exc:
                if exc.fatal:
                    raise
                observation = f"Tool error: {exc}"
        else:
            deps.memory.store(agent.role, task_id, "tool-input",
                              f"{tool.tool_id} {json.dumps(resp.tool_input, sort_keys=True)}")
            ctx = ToolContext(deps.workspace, deps.inputs, deps.state, deps.memory, task_id, agent.role)
            try:
                result = _dispatch(tool, resp.tool_input, ctx)
                observation = result.text
                artifacts.extend(tuple(a) for a in result.artifacts)
            except ToolError as exc:
                if exc.fatal:
                    raise
                observation = f"Tool error: {exc}"
        name = resp.tool_id if tool is None else tool.tool_id
        trace.append((name, in_digest, digest(observation)))
        deps.log.emit(event="tool", task_id=task_id, agent=agent.role, tool_id=name,
                      input_digest=in_digest, output_digest=digest(observation))
        messages.append(Message("assistant", _envelope(resp)))
        messages.append(Message("user", f"{OBSERVATION} {observation}"))
    raise AgentLoopExceeded(
        f"{agent.role} made {agent.max_iterations} calls on task {task_id!r} without a final answer")


def _delegate(state: _Delegation, request: dict, deps: Deps) -> str:
    if state.done:
        raise ToolError("this task has already been delegated; give your final answer")
    for key in ("coworker", "task"):
        if not isinstance(request.get(key), str) or not request[key].strip():
            raise ToolError(f"delegation needs a nonempty {key!r} field")
    try:
        out = delegate(state.crew, state.task, request, deps)
    except UnknownCoworker as exc:
        raise ToolError(str(exc)) from exc
    state.done.append(out)
    return out.raw_text


def delegate(crew: Crew, task: TaskSpec, request: dict, deps: Deps) -> TaskOutput:
    """Run the named coworker on the manager-authored instruction."""
    worker = crew.coworker(request["coworker"])
    deps.log.emit(event="delegation", task_id=task.id, coworker=worker.role)
    context = request.get("context") or ""
    if not isinstance(context, str):
        context = json.dumps(context, sort_keys=True)
    out = execute_task(worker, task.id, request["task"], task.expected_output, context, deps)
    deps.memory.store(worker.role, task.id, "task-output", out.raw_text)
    return out


def delegation_tool(coworkers) -> Tool:
    return Tool(
        DELEGATE,
        "Delegate work to coworker",
        "Hand the task to one coworker together with all the context they need. "
        f"Coworkers: {', '.join(coworkers)}.",
        func=None,
        input_fields={"coworker": "exact role of the coworker", "task": "instruction", "context": "background"},
    )


def run_crew(crew: Crew, inputs: dict, gateway: Gateway, log_path=None, workspace=None,
             state: dict | None = None, clock: Callable[[], float] = time.time) -> CrewOutput:
    needed = set()
    for task in crew.spec.tasks:
        needed |= placeholders(task.description) | placeholders(task.expected_output)
    missing = sorted(needed - set(inputs))
    if missing:
        raise PlaceholderMissing(f"inputs lack placeholders: {missing}")

    started = clock()
    log = RunLog(log_path)
    log.emit(event="run-start", started_at=started, process=crew.spec.process, tasks=[t.id for t in crew.spec.tasks])
    deps = Deps(gateway, crew.memory, crew.catalog, log, workspace, dict(inputs), state if state is not None else {})
    outputs, delegations = [], []
    try:
        for task in crew.spec.tasks:
            text = task.description.format(**inputs)
            expected = task.expected_output.format(**inputs)
            context = crew.memory.build_context(task.context_task_ids, CONTEXT_BUDGET)
            if context:
                crew.memory.store("crew", task.id, "context", context)
            if crew.spec.process == "hierarchical":
                out = _run_hierarchical(crew, task, text, expected, context, deps)
                if out.agent_role != crew.manager.role:
                    delegations.append((task.id, out.agent_role))
            else:
                out = execute_task(crew.agents[task.assigned_agent], task.id, text, expected, context, deps)
            crew.memory.store(out.agent_role, task.id, "task-output", out.raw_text)
            log.emit(event="task-complete", task_id=task.id, agent=out.agent_role, output_digest=digest(out.raw_text))
            outputs.append(out)
    except Exception as exc:
        finished = clock()
        log.emit(event="run-end", failed=True, error=type(exc).__name__, finished_at=finished)
        exc.partial = aggregate(outputs, started, finished, failed=True, delegations=delegations)
        raise
    finished = clock()
    log.emit(event="run-end", failed=False, finished_at=finished)
    return aggregate(outputs, started, finished, delegations=delegations)


def _run_hierarchical(crew: Crew, task: TaskSpec, text: str, expected: str, context: str, deps: Deps) -> TaskOutput:
    state = _Delegation(crew, task)
    manager_out = execute_task(crew.manager, task.id, text, expected, context, deps, delegation=state)
    if not state.done:
        return manager_out
    worker_out = state.done[-1]
    return TaskOutput(task.id, worker_out.agent_role, manager_out.raw_text,
                      worker_out.artifacts, worker_out.tool_trace)


def strip_timestamps(events: list[dict]) -> list[dict]:
    return [{k: v for k, v in e.items() if not k.endswith("_at")} for e in events]


# scripted policy -------------------------------------------------------------

class TemplatePolicy:
    """Deterministic stand-in for the LLM that follows the task templates.

    The manager delegates each task to its assigned agent with the task text
    verbatim; a worker calls its planned tool once and reports the observation.
    A plan entry is ``(tool_id, input)`` or a callable that receives the parsed
    task prompt (task text, expected output, context) and returns that pair.
    """

    def __init__(self, spec: CrewSpec, tool_plan: dict | None = None):
        self.spec = spec
        self.assigned = {t.id: t.assigned_agent for t in spec.tasks}
        self.tool_plan = dict(tool_plan or {})
        self.manager = spec.manager.role if spec.manager else None

    def __call__(self, request: ChatRequest) -> ChatResponse:
        user = next(m.content for m in request.messages if m.role == "user")
        p = parse_task_prompt(user)
        obs = observations(request)
        if p["agent"] == self.manager:
            if obs:
                return ChatResponse.final(obs[-1])
            return ChatResponse.tool(DELEGATE, {
                "coworker": self.assigned[p["task_id"]],
                "task": p["task"],
                "context": p["context"],
            })
        if obs:
            return ChatResponse.final(obs[-1])
        plan = self.tool_plan.get(p["task_id"])
        if plan is None:
            return ChatResponse.final(p["expected"])
        tool_id, tool_input = plan(p) if callable(plan) else plan
        return ChatResponse.tool(tool_id, tool_input)
