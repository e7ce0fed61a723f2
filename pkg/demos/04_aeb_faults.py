"""
Emergency braking: switching maxwait and noticing missing sensors
=================================================================

The controller waits 50 ms when both lidar and radar are due and not at
all otherwise.  A 70 ms lidar delay at the 100 ms instant makes it fall
back to radar, then classify the late lidar sample as tardy.  The
detector runs on its own timer and reports the gap 50 ms after the tag.
"""

from maxwait import run_federation
from maxwait.scenarios import build
from maxwait.scenarios.common import notes, reactions
from maxwait.tags import MSEC

r = run_federation(build("aeb", {"lidar_spike": "70ms"}).spec, 0)
for fed in ("controller", "detector"):
    print(fed)
    for e in reactions(r, fed):
        if 50 * MSEC <= e.tag.time <= 200 * MSEC:
            print(f"  tag {e.tag}  local {e.local_time / MSEC:6.1f} ms  {e.detail['mode']:<7} {notes(e)}")

for latency in ("5ms", "60ms"):
    run = run_federation(build("aeb", {"brake_latency": latency}).spec, 0)
    print(f"controller->brake latency {latency}: {run.counts['deadline_violations']} deadline violations")
