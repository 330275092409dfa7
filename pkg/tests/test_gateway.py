import json

import httpx
import pytest

from fincrew.errors import GatewayTransport, MalformedResponse, ReplayMiss
from fincrew.gateway import (
    PERSONA_GUARDRAIL,
    ChatRequest,
    ChatResponse,
    Gateway,
    HttpBackend,
    Message,
    RecordBackend,
    ReplayBackend,
    ScriptedBackend,
    clamp_guardrails,
    fingerprint,
    load_transcript,
    normalize,
    parse_action,
    parse_response,
)


def _req(text="hello", t=None):
    return ChatRequest((Message("system", "You are X."), Message("user", text)), temperature=t)


def test_normalize_and_fingerprint_stability():
    assert normalize("  a\n\tb  2024-05-01T10:00:00Z ") == "a b <ts>"
    assert fingerprint(_req("a  b")) == fingerprint(_req("a\nb"))
    assert fingerprint(_req("run at 2024-01-01 09:00:00")) == fingerprint(_req("run at 2025-12-31 23:59:59"))
    assert fingerprint(_req("a")) != fingerprint(_req("b"))
    assert fingerprint(_req("a", 0.3)) != fingerprint(_req("a", 0.0))


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(())
    with pytest.raises(ValueError):
        _req(t=1.5)
    with pytest.raises(ValueError):
        Message("bot", "x")


def test_clamp_guardrails():
    assert clamp_guardrails(_req()).temperature == 0.3
    assert clamp_guardrails(_req(t=1.0)).temperature == 0.7
    assert clamp_guardrails(_req(t=0.0)).temperature == 0.0
    once = clamp_guardrails(_req())
    assert once.messages[0].content.startswith(PERSONA_GUARDRAIL)
    assert clamp_guardrails(once) == once
    bare = clamp_guardrails(ChatRequest((Message("user", "x"),)))
    assert bare.messages[0] == Message("system", PERSONA_GUARDRAIL)


def test_parse_action_free_text():
    text = ('Thought: hand it over\nAction: Delegate work to coworker\n'
            'Action Input: {"coworker": "Senior Data Scientist II", "task": "Feature Engineering"}')
    r = parse_action(text)
    assert r.kind == "tool_call" and r.tool_id == "delegate"
    assert r.tool_input["task"] == "Feature Engineering"
    assert parse_action("The model is fine.") == ChatResponse.final("The model is fine.")
    assert parse_action("Thought: ok\nFinal Answer: done").text == "done"
    with pytest.raises(MalformedResponse):
        parse_action("Action: eda_tool\n")
    with pytest.raises(MalformedResponse):
        parse_action("")


def test_parse_response_envelope():
    assert parse_response('{"action": "final", "answer": "x"}') == ChatResponse.final("x")
    r = parse_response('```json\n{"action": "tool", "tool": "eda", "input": {"a": 1}}\n```')
    assert (r.tool_id, r.tool_input) == ("eda", {"a": 1})
    with pytest.raises(MalformedResponse):
        parse_response('{"action": "tool", "tool": "eda"}')


def test_replay_hit_and_miss():
    req = clamp_guardrails(_req("delegate EDA"))
    resp = ChatResponse.tool("delegate", {"coworker": "A", "task": "EDA"})
    gw = Gateway(ReplayBackend(entries={fingerprint(req): resp}))
    assert gw.complete(_req("delegate EDA")) == resp
    with pytest.raises(ReplayMiss) as err:
        gw.complete(_req("something else"))
    assert err.value.fingerprint in str(err.value)


def test_record_then_replay(tmp_path):
    path = tmp_path / "t.jsonl"
    upstream = ScriptedBackend(lambda r: ChatResponse.final(r.messages[-1].content.upper()))
    rec = Gateway(RecordBackend(upstream, path))
    assert rec.complete(_req("abc")).text == "ABC"
    assert rec.complete(_req("abc")).text == "ABC"
    assert upstream.calls == 1
    assert len(path.read_text().splitlines()) == 1
    assert Gateway(ReplayBackend(path)).complete(_req("abc")).text == "ABC"


def test_corrupt_transcript(tmp_path):
    (tmp_path / "bad.jsonl").write_text("{not json\n")
    with pytest.raises(MalformedResponse):
        load_transcript(tmp_path / "bad.jsonl")
    (tmp_path / "bad2.jsonl").write_text(json.dumps({"fingerprint": "x", "response": {"kind": "odd"}}) + "\n")
    with pytest.raises(MalformedResponse):
        load_transcript(tmp_path / "bad2.jsonl")
    assert load_transcript(tmp_path / "absent.jsonl") == {}


def test_http_backend_wire_shape():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        content = json.dumps({"action": "final", "answer": "ok"})
        return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})

    be = HttpBackend("http://llm.test/v1", "k", "m", transport=httpx.MockTransport(handler))
    assert Gateway(be).complete(_req("hi")).text == "ok"
    assert seen["url"] == "http://llm.test/v1/chat/completions"
    assert seen["auth"] == "Bearer k"
    assert seen["body"]["model"] == "m" and seen["body"]["temperature"] == 0.3


def test_http_backend_errors():
    def refuse(request):
        raise httpx.ConnectError("unreachable", request=request)

    with pytest.raises(GatewayTransport):
        HttpBackend("http://x", "", "m", transport=httpx.MockTransport(refuse)).complete(_req())
    bad = httpx.MockTransport(lambda r: httpx.Response(200, json={"choices": []}))
    with pytest.raises(MalformedResponse):
        HttpBackend("http://x", "", "m", transport=bad).complete(_req())
    err = httpx.MockTransport(lambda r: httpx.Response(500))
    with pytest.raises(GatewayTransport):
        HttpBackend("http://x", "", "m", transport=err).complete(_req())
