"""
Logical execution time and futures
==================================

An estimator's output is tagged exactly 100 ms after its input batch
no matter how long it computes; a timing check reports when compute
plus network time overruns that budget.  A delegator then waits for two
workers, giving up after absent_after.
"""

from maxwait import run_federation
from maxwait.scenarios import build
from maxwait.scenarios.common import notes, reactions
from maxwait.scenarios.let import estimate_offsets
from maxwait.scenarios.rpc import results

for compute in ("50ms", "90ms", "97ms", "150ms"):
    r = run_federation(build("let_pattern", {"compute_time": compute}).spec, 0)
    offsets = {d for _, d in estimate_offsets(r)}
    misses = sum(1 for e in reactions(r, "fastloop", "check") if notes(e).get("violation"))
    print(f"compute {compute:>5}: output offsets {sorted(offsets)} ns, timing-check misses {misses}")

for params in ({}, {"worker2_delay": "150ms"}, {"worker2_delay": "150ms", "absent_after": "forever"}):
    r = run_federation(build("rpc_futures", params).spec, 0)
    print(f"{params or 'defaults'}: results {[v for _, v in results(r)]}, "
          f"absent observations {r.counts['absent_assumed']}")
