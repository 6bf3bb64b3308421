"""
What a branching decision costs
===============================

When the candidate steps bind different tools, one tool call from the decider
both picks the branch and performs the action: one query.  When two steps
share a tool, or two have none, the call alone cannot tell them apart.  The
engine then offers placeholder tools ``explore_subtree_A``, ``_B``, ... and
asks once more for the arguments of every chosen branch that has a real tool.
"""

from sop_agent.deciders import ScriptedDecider
from sop_agent.engine import run
from sop_agent.graph import build_graph
from sop_agent.sop_format import parse_sop

distinct = build_graph(parse_sop("""
- greet the customer:
    API: greet
    Instructions:
    - offer a refund:
        API: offer_refund
    - offer a discount:
        API: offer_discount
"""))

shared = build_graph(parse_sop("""
- greet the customer:
    API: greet
    Instructions:
    - send the refund form by email:
        API: send_email
    - send the survey by email:
        API: send_email
"""))


def show(title, graph, plan):
    decider = ScriptedDecider(plan, fallback="error")
    result = run(graph, decider, lambda call: {"ok": True})
    first = result.trace[0]
    print(f"{title}: mode={first.branch_mode.value} queries={first.queries_used} "
          f"trajectory={list(result.trajectory.calls)}")
    for i, request in enumerate(decider.requests):
        print(f"    request {i + 1} ({request.purpose}) offers {list(request.tool_names)}")


show("distinct tools", distinct, ["offer_discount"])

# %%
# Selecting one of two ``send_email`` branches costs the placeholder query
# plus one query for the email's arguments.

show("shared tool, one branch", shared, [["explore_subtree_B"], "send_email"])

# %%
# Conditions need not exclude each other.  Selecting both branches costs
# 1 + 2 queries, and the branches run in listing order.

show("shared tool, both branches", shared, [["explore_subtree_A", "explore_subtree_B"], "send_email", "send_email"])
