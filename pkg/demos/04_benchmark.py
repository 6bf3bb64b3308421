"""
Simulated benchmark runs
========================

A benchmark case is an SOP plus an output schema for every observable tool.
Each run draws a test environment from a seed, derives the ground truth
trajectory, runs the agent, and scores the result two ways:

* path accuracy: the whole sequence of calls matches;
* leaf accuracy: the last call of every ground-truth path was made.
"""

from pathlib import Path

import numpy as np

from sop_agent import corpus
from sop_agent.bench import (
    format_report,
    ground_truth_trajectory,
    load_case_file,
    oracle_factory,
    run_benchmark,
    sample_environment,
)
from sop_agent.deciders import OracleDecider
from sop_agent.protocol import DeciderResponse, ToolCall

case = corpus.load_bundled_case("service_interruption_refined")

# %%
# Outputs are drawn so that each branch is taken in proportion to the number
# of leaves beneath it.  Failed authentication guards 1 of the 6 leaves.

draws = [sample_environment(case, seed).outputs["authenticate_customer"][0]["authentication_status"]
         for seed in range(5000)]
print("share of failed authentications:", np.mean([d == "failed" for d in draws]).round(3), "(1/6 = 0.167)")

env = sample_environment(case, 3)
print("seed 3 environment:", dict(env.outputs))
print("seed 3 ground truth:", list(ground_truth_trajectory(case.graph, env).calls))

# %%
# The oracle follows the conditions exactly, so it scores 1.0 on both metrics.

print(format_report(run_benchmark([case], oracle_factory, runs_per_case=100)))

# %%
# An agent that jumps from the eligibility check straight to issuing the
# refund skips an intermediate action.  Its leaf calls are all there, but the
# path differs from the ground truth whenever a refund is due.

refund = load_case_file(Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "refund_shortcut.case")


class Hasty:
    def __init__(self, graph, env):
        self.oracle = OracleDecider(graph, env)

    def decide(self, request):
        answer = self.oracle.decide(request)
        if [s.name for s in answer.selections] == ["start_refund"]:
            return DeciderResponse((ToolCall("issue_refund", {}),))
        return answer


print(format_report(run_benchmark([refund], lambda g, e, s: Hasty(g, e), runs_per_case=100)))
