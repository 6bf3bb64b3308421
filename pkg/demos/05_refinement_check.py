"""
Checking whether an SOP needs refinement
========================================

Before a procedure is trusted, it is run on a batch of seeded trials and
every trajectory is compared with the ground truth.  Any divergence is listed
with its seed so that it can be replayed while the SOP text is edited.
"""

from sop_agent import corpus
from sop_agent.bench import oracle_factory, refinement_check, with_faults

case = corpus.load_bundled_case("service_interruption_refined")

report = refinement_check(case, oracle_factory, n_runs=20)
print("oracle needs refinement:", report.needs_refinement)

# %%
# ``with_faults`` makes the decider take one wrong branch on chosen seeds,
# which stands in for an agent that misreads an ambiguous step.

report = refinement_check(case, with_faults(oracle_factory, [7]), n_runs=20)
print("faulty decider needs refinement:", report.needs_refinement)
for d in report.divergent:
    print(f"  seed {d.seed}")
    print(f"    predicted {list(d.predicted.calls)}")
    print(f"    truth     {list(d.truth.calls)}")

# %%
# The same check is available from the shell; its exit status is 1 when any
# trial diverges:
#
#     sop-agent refine-check --case <case file> --fault-seed 7
