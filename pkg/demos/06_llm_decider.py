"""
Driving the engine with a language model
========================================

``LLMDecider`` sends each branching question to a chat-completions endpoint
with the filtered toolset attached, and reads the tool calls back.  With
SOP_AGENT_ENDPOINT, SOP_AGENT_MODEL and SOP_AGENT_API_KEY set it talks to a
real model; otherwise this script answers with a stand-in transport that
always calls the first offered tool, so the wire format can be inspected
offline.
"""

import json
import os

import httpx

from sop_agent import corpus
from sop_agent.bench import ground_truth_trajectory, sample_environment
from sop_agent.engine import run
from sop_agent.llm import LLMConfig, LLMDecider

case = corpus.load_bundled_case("service_interruption_refined")
env = sample_environment(case, 1)

live = all(os.environ.get(v) for v in ("SOP_AGENT_ENDPOINT", "SOP_AGENT_MODEL", "SOP_AGENT_API_KEY"))
if live:
    decider = LLMDecider(LLMConfig.from_env())
else:
    first_request = []

    def first_tool(request):
        body = json.loads(request.content)
        first_request.append(body)
        message = {"role": "assistant", "content": "Continuing with the next step."}
        if body.get("tools"):
            # a step whose candidates bind no tool is answered in plain text
            name = body["tools"][0]["function"]["name"]
            message["tool_calls"] = [{"id": "call_1", "type": "function", "function": {"name": name, "arguments": "{}"}}]
        return httpx.Response(200, json={"choices": [{"message": message}]})

    config = LLMConfig("http://offline.invalid/v1/chat/completions", "stand-in", "unused")
    decider = LLMDecider(config, client=httpx.Client(transport=httpx.MockTransport(first_tool)))

result = run(case.graph, decider, env.executor())
print("terminal:", result.terminal)
print("agent:       ", list(result.trajectory.calls))
print("ground truth:", list(ground_truth_trajectory(case.graph, env).calls))
print("requests sent:", decider.attempts)

if not live:
    # %%
    # The first request: system and user messages plus one function schema
    # per tool the current step allows.
    print(json.dumps(first_request[0], indent=2)[:1500])
