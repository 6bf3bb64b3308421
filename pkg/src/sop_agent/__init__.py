"""Parse pseudocode-style SOPs into decision graphs and execute them by
selective depth-first traversal, with a seeded benchmark harness."""

from .sop_format import (
    Always,
    Textual,
    Structured,
    ToolSpec,
    NodeSpec,
    SopDocument,
    SopSyntaxError,
    Diagnostic,
    parse_sop,
    validate,
    serialize,
)
from .graph import DecisionGraph, DecisionNode, GraphStats, build_graph, successors, leaf_count_below, compute_stats
from .protocol import BranchMode, ToolCall, DeciderRequest, DeciderResponse
from .engine import (
    Memory,
    RetryPolicy,
    RunLimits,
    RunResult,
    TraceEvent,
    Trajectory,
    classify_branching,
    build_step_prompt,
    execute_with_retry,
    run,
)
from .deciders import Environment, OracleDecider, ScriptedDecider, eval_condition, oracle_decider
from .bench import (
    CaseSpec,
    load_case,
    load_case_file,
    sample_environment,
    ground_truth_trajectory,
    score_run,
    run_benchmark,
    refinement_check,
)

__version__ = "0.1.0"
