"""
Running an SOP step by step
===========================

The engine walks the decision graph depth first.  On entering a node it calls
the node's tool, then asks a decider which of the following steps apply.
Here the decider is an oracle that checks the structured conditions against
the tool outputs, so the run is fully predictable.
"""

from sop_agent import corpus
from sop_agent.deciders import Environment, OracleDecider
from sop_agent.engine import dump_trace, run

graph = corpus.load_bundled_case("service_interruption_refined").graph

# %%
# An environment is a queue of canned outputs per tool.  This customer passes
# authentication, has an active account, and lives in an area with an outage.

env = Environment.of({
    "authenticate_customer": [{"authentication_status": "success"}],
    "verify_customer_account": [{"account_status": "active"}],
    "check_area_outages": [{"outage_status": "outage reported"}],
    "check_outage_resolution_time": [{"estimated_resolution": "2 hours"}],
})

result = run(graph, OracleDecider(graph, env), env.executor())
print("terminal:", result.terminal)
print("trajectory:", list(result.trajectory.calls))
print("decider queries:", result.query_count)

# %%
# The trace has one record per visited node.  ``candidates`` are the steps
# offered at that point and ``chosen`` the ones the decider picked.

print(dump_trace(result.trace))

# %%
# With a failed authentication the procedure ends right after the first call.

env = Environment.of({"authenticate_customer": [{"authentication_status": "failed"}]})
short = run(graph, OracleDecider(graph, env), env.executor())
print("failed authentication:", list(short.trajectory.calls))
