"""
Replicated bank accounts: waiting versus not waiting
====================================================

Two account managers hold copies of one balance.  With maxwait forever
and ATM null messages they agree at every tag.  With maxwait 0 they
process requests in arrival order; an order-insensitive reducer still
converges, the overdraft-penalty reducer may not.
"""

import numpy as np

from maxwait import run_federation
from maxwait.checker import check_eventual_consistency, check_logical_time_consistency, permutation_oracle
from maxwait.config import Overrides
from maxwait.scenarios import build
from maxwait.scenarios.bank import acid_machine, penalty_machine
from maxwait.scenarios.common import reactions
from maxwait.tags import MSEC

jitter = Overrides(jitter=[("*", 0, 40 * MSEC)])

conservative = run_federation(jitter.apply(build("bank_conservative").spec), seed=3)
print("conservative:", check_logical_time_consistency(conservative.trace, ["a1", "a2"]).to_dict())
lag = np.array([e.local_time - e.tag.time for e in reactions(conservative, "a1")]) / 1e6
print(f"  a1 processing lag: median {np.median(lag):.1f} ms, max {lag.max():.1f} ms (null period 1 s)")

for reducer, deposits in (("acid", [10, 20, -5]), ("penalty", [20, 40, -50])):
    built = build("bank_acid", {"reducer": reducer, "deposits": deposits})
    verdicts = [check_eventual_consistency(run_federation(jitter.apply(built.spec), s).trace, ["a1", "a2"]).verdict
                for s in range(30)]
    machine = acid_machine() if reducer == "acid" else penalty_machine()
    n_final = len(permutation_oracle(machine, deposits))
    print(f"{reducer:>8} {deposits}: {n_final} possible final state(s); "
          f"{verdicts.count('PASS')}/30 seeds converged")

# {+30, -50} from an empty account: both orders end at 0
print("penalty {+30, -50} final states:", len(permutation_oracle(penalty_machine(), [30, -50])))
print("penalty {+30, -50} from balance 20:", len(permutation_oracle(penalty_machine(20), [30, -50])))
