"""
A door that waits for the camera
================================

The door federate has maxwait forever.  It only handles the cockpit's
"open" command once the camera's ramp report for the same tag is known,
so the disarm reaction always runs first.  Then we make the door
impatient (maxwait 0) and watch it open armed.
"""

from maxwait import run_federation
from maxwait.config import Overrides
from maxwait.scenarios import build
from maxwait.scenarios.common import notes, reactions

built = build("aircraft_door")
result = run_federation(built.spec, seed=0)

print("door reactions with maxwait forever:")
for e in reactions(result, "door"):
    print(f"  tag {e.tag}  local {e.local_time / 1e6:8.1f} ms  {e.detail['reaction']:<7} {notes(e)}")

# the camera takes 30 ms, so the open command waits ~40 ms for the disarm
first_open = reactions(result, "door", "open")[0]
print("apparent wait before opening:", (first_open.local_time - first_open.tag.time) / 1e6, "ms")

impatient = build("aircraft_door", {"door_maxwait": "0"})
r0 = run_federation(impatient.spec, seed=0)
for e in impatient.evaluate(r0):
    print(f"maxwait 0: {e['name']:<20} {'ok' if e['passed'] else 'FAIL'}  {e['detail']}")

# cut the camera link: a door that waits forever stalls instead of guessing
cut = Overrides(partitions=[("camera.ramp_present", 0)]).apply(built.spec)
stalled = run_federation(cut, seed=0)
print("with the camera unreachable:", stalled.status, stalled.stalls)
