"""Constructed SOPs, cases and deciders shared by several test modules."""

import json
from pathlib import Path

from sop_agent.bench import load_case, load_case_file
from sop_agent.deciders import OracleDecider
from sop_agent.protocol import DeciderResponse, ToolCall

FIXTURES = Path(__file__).parent / "fixtures"
BOOL_SCHEMA = '{"type": "boolean", "variable": "flag"}'

# sibling branches binding distinct tools, a shared tool, and no tools
THREE_TOOLS = """\
- start:
    API: begin
    Instructions:
    - a:
        API: fn_A
    - b:
        API: fn_B
    - c:
        API: fn_C
"""

SAME_TOOL = """\
- start:
    API: begin
    Instructions:
    - a:
        API: fn_A
        Instructions:
        - a1:
            API: fa
    - b:
        API: fn_A
        Instructions:
        - b1:
            API: fb
"""

NO_TOOLS = """\
- start:
    API: begin
    Instructions:
    - a:
    - b:
"""


def fixture_case(name):
    return load_case_file(FIXTURES / f"{name}.case")


def _leaves(n, indent):
    pad = " " * indent
    return "".join(f"{pad}- leaf {i}:\n{pad}    API: leaf_{i}\n" for i in range(n)) if n > 1 else ""


def guarded_case(schema, branches):
    """Case whose probe tool guards one branch per (condition json, leaf count).

    A branch with n > 1 leaves gets n always-children below it.
    """
    lines = [
        "case: guarded",
        "sop:",
        "    - guarded_workflow:",
        '        API: {"name": "Guarded", "description": "constructed"}',
        "        Instructions:",
        "        - probe the system:",
        "            API: probe",
        "            Instructions:",
    ]
    body = "\n".join(lines) + "\n"
    for i, (cond, leaves) in enumerate(branches):
        body += f"            - branch {i}:\n                condition: {cond}\n                API: act_{i}\n"
        if leaves > 1:
            body += "                Instructions:\n" + _leaves(leaves, 16).replace("leaf_", f"leaf_{i}_")
    body += f"tool_outputs:\n    probe: {schema}\n"
    return load_case(body)


def cond(value, comparator="is", variable="flag"):
    return json.dumps({"API": "probe", "variable": variable, "condition_type": comparator, "value": value})


class ShortcutDecider:
    """Oracle that jumps straight to issue_refund whenever start_refund applies."""

    def __init__(self, graph, env):
        self.oracle = OracleDecider(graph, env)

    def decide(self, request):
        response = self.oracle.decide(request)
        names = request.tool_names
        if [s.name for s in response.selections] == ["start_refund"] and "issue_refund" in names:
            return DeciderResponse((ToolCall("issue_refund", {}),))
        return response


def shortcut_factory(graph, env, seed):
    return ShortcutDecider(graph, env)
