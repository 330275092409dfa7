"""Chat-completion gateway with live, record and replay backends."""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field, replace
from typing import Callable

from .errors import GatewayTransport, MalformedResponse, ReplayMiss

ROLES = ("system", "user", "assistant", "tool")

ENV_URL = "FINCREW_LLM_URL"
ENV_KEY = "FINCREW_LLM_API_KEY"
ENV_MODEL = "FINCREW_LLM_MODEL"
DEFAULT_URL = "https://api.openai.com/v1"
DEFAULT_MODEL = "gpt-3.5-turbo"


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown message role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple
    temperature: float | None = None
    tool_schemas: tuple = ()  # (tool_id, {field: description})

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        object.__setattr__(self, "messages", tuple(
            m if isinstance(m, Message) else Message(*m) for m in self.messages))
        if self.temperature is not None and not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must lie in [0, 1]")


@dataclass(frozen=True)
class ChatResponse:
    kind: str  # "final" | "tool_call"
    text: str | None = None
    tool_id: str | None = None
    tool_input: dict | None = None

    def __post_init__(self):
        if self.kind == "final":
            if self.text is None:
                raise ValueError("final responses carry text")
        elif self.kind == "tool_call":
            if self.tool_id is None or self.tool_input is None:
                raise ValueError("tool calls carry tool_id and tool_input")
        else:
            raise ValueError(f"unknown response kind {self.kind!r}")

    @classmethod
    def final(cls, text: str) -> "ChatResponse":
        return cls("final", text=text)

    @classmethod
    def tool(cls, tool_id: str, tool_input: dict) -> "ChatResponse":
        return cls("tool_call", tool_id=tool_id, tool_input=dict(tool_input))

    def to_dict(self) -> dict:
        if self.kind == "final":
            return {"kind": "final", "text": self.text}
        return {"kind": "tool_call", "tool_id": self.tool_id, "tool_input": self.tool_input}

    @classmethod
    def from_dict(cls, d: dict) -> "ChatResponse":
        try:
            return cls(d["kind"], d.get("text"), d.get("tool_id"), d.get("tool_input"))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"bad recorded response: {exc}") from exc


# fingerprints --------------------------------------------------------------

_TIMESTAMP = re.compile(
    r"\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}(?::\d{2}(?:\.\d+)?)?(?:Z|[+-]\d{2}:?\d{2})?")
_SPACE = re.compile(r"\s+")


def normalize(text: str) -> str:
    return _SPACE.sub(" ", _TIMESTAMP.sub("<ts>", text)).strip()


def fingerprint(request: ChatRequest) -> str:
    payload = {
        "messages": [[m.role, normalize(m.content)] for m in request.messages],
        "temperature": request.temperature,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# guardrails ----------------------------------------------------------------

PERSONA_GUARDRAIL = (
    "Stay within your assigned role. Use only the tools you are given and "
    "do not invent file contents or numbers you have not observed."
)


@dataclass(frozen=True)
class GuardrailPolicy:
    default_temperature: float = 0.3
    min_temperature: float = 0.0
    max_temperature: float = 0.7
    persona_prefix: str = PERSONA_GUARDRAIL


def clamp_guardrails(request: ChatRequest, policy: GuardrailPolicy = GuardrailPolicy()) -> ChatRequest:
    t = request.temperature
    t = policy.default_temperature if t is None else min(max(t, policy.min_temperature), policy.max_temperature)
    msgs = list(request.messages)
    prefix = policy.persona_prefix
    if msgs[0].role == "system":
        if not msgs[0].content.startswith(prefix):
            msgs[0] = Message("system", f"{prefix}\n\n{msgs[0].content}")
    else:
        msgs.insert(0, Message("system", prefix))
    return replace(request, messages=tuple(msgs), temperature=t)


# response parsing ----------------------------------------------------------

ACTION_ALIASES = {
    "delegate work to coworker": "delegate",
    "ask question to coworker": "ask",
}

_FENCE = re.compile(r"^```(?:json)?\s*|\s*```$")


def _json_object(text: str):
    text = _FENCE.sub("", text.strip())
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        # tolerate trailing prose after the object
        try:
            value, _ = json.JSONDecoder().raw_decode(text)
        except json.JSONDecodeError:
            return None
    return value if isinstance(value, dict) else None


def parse_action(text: str) -> ChatResponse:
    """Lenient parser for ``Action:`` / ``Action Input:`` free text."""
    if not text or not text.strip():
        raise MalformedResponse("empty model output")
    m = re.search(r"^\s*Action\s*:\s*(.+?)\s*$", text, re.MULTILINE)
    if m is None:
        fin = re.search(r"Final Answer\s*:\s*", text)
        return ChatResponse.final(text[fin.end():].strip() if fin else text.strip())
    name = m.group(1).strip()
    rest = text[m.end():]
    mi = re.search(r"Action Input\s*:\s*", rest)
    if mi is None:
        raise MalformedResponse(f"action {name!r} has no input block")
    tool_input = _json_object(rest[mi.end():])
    if tool_input is None:
        raise MalformedResponse(f"action {name!r} input is not a JSON object")
    return ChatResponse.tool(ACTION_ALIASES.get(name.lower(), name), tool_input)


def parse_response(text: str) -> ChatResponse:
    """Strict JSON envelope first, free-text fallback second."""
    obj = _json_object(text)
    if obj is not None and "action" in obj:
        if obj["action"] == "final" and isinstance(obj.get("answer"), str):
            return ChatResponse.final(obj["answer"])
        if obj["action"] == "tool" and isinstance(obj.get("tool"), str) and isinstance(obj.get("input"), dict):
            return ChatResponse.tool(obj["tool"], obj["input"])
        raise MalformedResponse("envelope is missing required fields")
    return parse_action(text)


# backends ------------------------------------------------------------------

class Backend:
    def complete(self, request: ChatRequest) -> ChatResponse:  # pragma: no cover - interface
        raise NotImplementedError


class ScriptedBackend(Backend):
    """Answers from a Python policy; no network. Used as the recording upstream and in tests."""

    def __init__(self, policy: Callable[[ChatRequest], ChatResponse]):
        self.policy = policy
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        return self.policy(request)


class SequenceBackend(Backend):
    """Returns canned responses in order, repeating the last one."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = 0

    def complete(self, request):
        r = self.responses[min(self.calls, len(self.responses) - 1)]
        self.calls += 1
        return r


class HttpBackend(Backend):
    """OpenAI-compatible ``/chat/completions`` client."""

    def __init__(self, url: str | None = None, api_key: str | None = None, model: str | None = None,
                 timeout: float = 60.0, transport=None):
        import httpx

        self.url = (url or os.environ.get(ENV_URL) or DEFAULT_URL).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_KEY, "")
        self.model = model or os.environ.get(ENV_MODEL) or DEFAULT_MODEL
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self._httpx = httpx
        self.calls = 0

    def payload(self, request: ChatRequest) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
        }

    def complete(self, request):
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        self.calls += 1
        try:
            resp = self._client.post(f"{self.url}/chat/completions", json=self.payload(request), headers=headers)
            resp.raise_for_status()
        except self._httpx.HTTPError as exc:
            raise GatewayTransport(f"chat completion request failed: {exc}") from exc
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected completion payload: {exc}") from exc
        if not isinstance(content, str):
            raise MalformedResponse("completion content is not text")
        return parse_response(content)


def load_transcript(path) -> dict[str, ChatResponse]:
    out: dict[str, ChatResponse] = {}
    if not os.path.exists(path):
        return out
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                fp = rec["fingerprint"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise MalformedResponse(f"transcript line {n} is unreadable") from exc
            out[fp] = ChatResponse.from_dict(rec["response"])
    return out


class ReplayBackend(Backend):
    def __init__(self, path=None, entries: dict | None = None):
        self.entries = dict(entries or {})
        if path is not None:
            self.entries.update(load_transcript(path))
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        fp = fingerprint(request)
        try:
            return self.entries[fp]
        except KeyError:
            raise ReplayMiss(fp) from None


class RecordBackend(Backend):
    """Replays known fingerprints and records new ones from ``upstream``."""

    def __init__(self, upstream: Backend, path):
        self.upstream = upstream
        self.path = path
        self.entries = load_transcript(path)
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        fp = fingerprint(request)
        if fp in self.entries:
            return self.entries[fp]
        resp = self.upstream.complete(request)
        self.entries[fp] = resp
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"fingerprint": fp, "response": resp.to_dict()}, sort_keys=True) + "\n")
        return resp


@dataclass
class Gateway:
    """Backend plus guardrails. Every agent request passes through here."""

    backend: Backend
    policy: GuardrailPolicy = field(default_factory=GuardrailPolicy)
    calls: int = 0

    def complete(self, request: ChatRequest) -> ChatResponse:
        self.calls += 1
        return self.backend.complete(clamp_guardrails(request, self.policy))
