import json

import httpx
import pytest

from sop_agent.llm import LLMConfig, LLMDecider, build_payload, parse_response
from sop_agent.protocol import (
    BranchMode,
    ContractViolation,
    DeciderRequest,
    MalformedResponse,
    ToolCall,
    TransportError,
)
from sop_agent.sop_format import ToolParam, ToolSpec

CONFIG = LLMConfig("https://llm.test/v1/chat/completions", "test-model", "secret", backoff=0.5)
REQUEST = DeciderRequest(
    "choose",
    (ToolSpec("fn_A", "first"), ToolSpec("fn_B", "second", (ToolParam("q", "text", "query"),)), ToolSpec("fn_C")),
    BranchMode.DISTINGUISHABLE,
)


def completion(tool_calls=None, content=None):
    message = {"role": "assistant", "content": content}
    if tool_calls is not None:
        message["tool_calls"] = [
            {"id": f"c{i}", "type": "function", "function": {"name": n, "arguments": json.dumps(a)}}
            for i, (n, a) in enumerate(tool_calls)
        ]
    return {"choices": [{"index": 0, "message": message}]}


def decider_with(*responses):
    """Decider whose transport replays ``responses`` (status, body) in order."""
    queue = list(responses)
    seen = []

    def handler(request: httpx.Request):
        seen.append(request)
        status, body = queue.pop(0)
        return httpx.Response(status, json=body)

    sleeps = []
    d = LLMDecider(CONFIG, client=httpx.Client(transport=httpx.MockTransport(handler)), sleep=sleeps.append)
    return d, seen, sleeps


def test_single_tool_call():
    d, seen, _ = decider_with((200, completion([("fn_B", {})])))
    assert d.decide(REQUEST).selections == (ToolCall("fn_B", {}),)
    assert d.attempts == 1
    assert seen[0].headers["authorization"] == "Bearer secret"


def test_text_only_reply_is_no_call():
    d, _, _ = decider_with((200, completion(content="The customer is fine.")))
    response = d.decide(REQUEST)
    assert response.no_call and response.selections == ()


def test_rate_limit_is_retried():
    d, seen, sleeps = decider_with((429, {}), (429, {}), (200, completion([("fn_A", {})])))
    assert d.decide(REQUEST).selections[0].name == "fn_A"
    assert d.attempts == 3
    assert len(seen) == 3
    assert sleeps == [0.5, 1.0]


def test_gives_up_after_max_attempts():
    d, _, _ = decider_with((503, {}), (503, {}), (503, {}))
    with pytest.raises(TransportError, match="3 attempts"):
        d.decide(REQUEST)


def test_client_error_is_not_retried():
    d, seen, _ = decider_with((401, {"error": "bad token"}))
    with pytest.raises(TransportError, match="401"):
        d.decide(REQUEST)
    assert len(seen) == 1


def test_network_error_is_retried():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) == 1:
            raise httpx.ConnectTimeout("slow", request=request)
        return httpx.Response(200, json=completion([("fn_C", {})]))

    d = LLMDecider(CONFIG, client=httpx.Client(transport=httpx.MockTransport(handler)), sleep=lambda s: None)
    assert d.decide(REQUEST).selections[0].name == "fn_C"
    assert d.attempts == 2


def test_unknown_tool_is_contract_violation():
    d, _, _ = decider_with((200, completion([("fn_Z", {})])))
    with pytest.raises(ContractViolation) as info:
        d.decide(REQUEST)
    assert info.value.tool_name == "fn_Z"


def test_malformed_bodies():
    with pytest.raises(MalformedResponse):
        parse_response({"choices": []}, REQUEST)
    bad_args = {"choices": [{"message": {"tool_calls": [{"function": {"name": "fn_A", "arguments": "{oops"}}]}}]}
    with pytest.raises(MalformedResponse):
        parse_response(bad_args, REQUEST)


def test_two_calls_in_distinguishable_mode_violate_contract():
    with pytest.raises(ContractViolation):
        parse_response(completion([("fn_A", {}), ("fn_B", {})]), REQUEST)


def test_payload_shape():
    payload = build_payload(REQUEST, CONFIG)
    assert payload["model"] == "test-model"
    assert payload["temperature"] == 0.0
    assert [m["role"] for m in payload["messages"]] == ["system", "user"]
    assert payload["messages"][1]["content"] == "choose"
    assert [t["function"]["name"] for t in payload["tools"]] == ["fn_A", "fn_B", "fn_C"]
    assert payload["tools"][1]["function"]["parameters"] == {
        "type": "object",
        "properties": {"q": {"type": "string", "description": "query"}},
        "required": ["q"],
    }
    assert payload["parallel_tool_calls"] is False
    multi = DeciderRequest("p", REQUEST.tools, BranchMode.INDISTINGUISHABLE, multi_select_allowed=True)
    assert build_payload(multi, CONFIG)["parallel_tool_calls"] is True


def test_config_from_env(monkeypatch):
    monkeypatch.delenv("SOP_AGENT_API_KEY", raising=False)
    monkeypatch.setenv("SOP_AGENT_ENDPOINT", "https://e")
    monkeypatch.setenv("SOP_AGENT_MODEL", "m")
    with pytest.raises(ValueError, match="auth"):
        LLMConfig.from_env()
    monkeypatch.setenv("SOP_AGENT_API_KEY", "k")
    config = LLMConfig.from_env(model="override")
    assert (config.endpoint, config.model, config.temperature) == ("https://e", "override", 0.0)
    assert "auth" not in repr(config)


def test_llm_decider_drives_a_full_run(refined_case):
    """Whole run through the wire protocol, with a fake endpoint answering as the oracle."""
    from sop_agent.bench import ground_truth_trajectory, sample_environment
    from sop_agent.deciders import OracleDecider
    from sop_agent.engine import run

    env = sample_environment(refined_case, 4)
    oracle = OracleDecider(refined_case.graph, env)
    asked, payloads = [], []

    class Recording(LLMDecider):
        def decide(self, request):
            asked.append(request)
            return super().decide(request)

    def handler(request):
        payloads.append(json.loads(request.content))
        answer = oracle.decide(asked[-1])
        calls = [(s.name, dict(s.arguments)) for s in answer.selections]
        return httpx.Response(200, json=completion(calls or None))

    d = Recording(CONFIG, client=httpx.Client(transport=httpx.MockTransport(handler)), sleep=lambda s: None)
    result = run(refined_case.graph, d, env.executor())
    assert result.terminal.completed
    assert result.trajectory == ground_truth_trajectory(refined_case.graph, env)
    assert d.attempts == result.query_count == len(payloads)
    assert all(p["temperature"] == 0.0 and p["tools"] for p in payloads)
