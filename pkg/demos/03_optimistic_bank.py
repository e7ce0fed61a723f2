"""
Bounded unavailability with a delayed true balance
==================================================

Account managers answer every request within maxwait (30 ms) using a
local estimate.  The true balance comes back over a connection with a
10 s logical delay, so it is never older than 20 s.  A latency spike
longer than that delay turns the feedback into a tardy message.
"""

import numpy as np

from maxwait import run_federation
from maxwait.config import Overrides
from maxwait.scenarios import build
from maxwait.scenarios.bank import response_latencies, staleness
from maxwait.tags import MSEC, SEC

built = build("bank_optimistic")
wide = Overrides(latency=[("*", 0)], jitter=[("*", 0, 5 * SEC)])

lat, stale = [], []
for seed in range(10):
    r = run_federation(wide.apply(built.spec), seed)
    lat += response_latencies(r)
    stale += staleness(r)
lat, stale = np.array(lat) / MSEC, np.array(stale) / SEC
print(f"responses: {lat.size}, latency p50 {np.median(lat):.1f} ms, max {lat.max():.1f} ms")
print(f"staleness: p50 {np.median(stale):.2f} s, max {stale.max():.2f} s")

spike = Overrides(spikes=[("b1.balance", 20 * SEC, 21 * SEC, 11 * SEC)]).apply(built.spec)
r = run_federation(spike, 0)
for e in r.trace.kind("tardy"):
    print(f"tardy at {e.federate}: intended {e.tag}, arrived at local {e.local_time / SEC:.3f} s")
