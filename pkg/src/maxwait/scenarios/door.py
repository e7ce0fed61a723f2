"""Remote aircraft door: the door must be disarmed before it opens when a ramp is present.

The cockpit sends open/close commands to the door and to a camera.  The
camera answers, at the same tag, whether a ramp is at the door.  The door
waits forever for both inputs, and its disarm reaction is declared before
its open reaction, so a same-tag disarm always wins.
"""

from __future__ import annotations

from ..model import (
    ActionSpec, ConnectionSpec, FederateSpec, FederationSpec, ReactionSpec, reaction_body,
)
from ..netsim import ChannelModel
from ..tags import FOREVER, MSEC, SEC
from .common import Expectation, Param, ScenarioEntry, clean_status, notes, reactions, register, tardy_count


@reaction_body("door.cockpit_command")
def cockpit_command(ctx):
    ctx.set("open", bool(ctx.get("command")))


@reaction_body("door.camera_check")
def camera_check(ctx):
    t = ctx.tag.time
    present = any(start <= t < end for start, end in ctx.params["ramp_windows"])
    ctx.note(ramp=present)
    ctx.set("ramp_present", present)


@reaction_body("door.disarm")
def door_disarm(ctx):
    s = ctx.state
    value = ctx.get("disarm")
    if value and not s["disarmed"]:
        s["disarmed"] = True
    elif not value and s["disarmed"]:
        s["disarmed"] = False
    ctx.note(disarmed=s["disarmed"])


@reaction_body("door.open")
def door_open(ctx):
    s = ctx.state
    value = ctx.get("open")
    deployed = False
    if value and not s["open"]:
        s["open"] = True
        if not s["disarmed"]:
            # opening an armed door inflates the slide
            s["slide_deployed"] += 1
            deployed = True
    elif not value and s["open"]:
        s["open"] = False
    ctx.note(open=s["open"], slide_deployed=deployed)


def build(p: dict) -> FederationSpec:
    commands = tuple((int(t), bool(v)) for t, v in p["commands"])
    windows = [[int(a), int(b)] for a, b in p["ramp_windows"]]
    cockpit = FederateSpec(
        "cockpit", outputs=("open",), actions=[ActionSpec("command", commands)],
        reactions=[ReactionSpec("command", "door.cockpit_command", ("command",), effects=("open",))],
    )
    camera = FederateSpec(
        "camera", inputs=("check_ramp",), outputs=("ramp_present",),
        reactions=[ReactionSpec("check", "door.camera_check", ("check_ramp",), effects=("ramp_present",),
                                compute_time=p["vision_time"], params={"ramp_windows": windows})],
    )
    door = FederateSpec(
        "door", inputs=("open", "disarm"), maxwait=p["door_maxwait"],
        state={"disarmed": False, "open": False, "slide_deployed": 0},
        reactions=[
            ReactionSpec("disarm", "door.disarm", ("disarm",)),
            ReactionSpec("open", "door.open", ("open",)),
        ],
    )
    conns = [
        ConnectionSpec("cockpit.open", "door.open"),
        ConnectionSpec("cockpit.open", "camera.check_ramp"),
        ConnectionSpec("camera.ramp_present", "door.disarm"),
    ]
    return FederationSpec(
        "aircraft_door", [cockpit, camera, door], conns,
        default_channel=ChannelModel(p["latency"]), duration=p["duration"],
        metadata={"groups": [], "ramp_windows": windows},
    )


def _disarm_first(result, _p):
    by_tag = {}
    for e in reactions(result, "door"):
        by_tag.setdefault(str(e.tag), []).append(e.detail["reaction"])
    both = {t: seq for t, seq in by_tag.items() if "disarm" in seq and "open" in seq}
    ok = all(seq.index("disarm") < seq.index("open") for seq in both.values())
    return ok, {"same_tag_pairs": len(both)}


def _no_slide_with_ramp(result, _p):
    ramp_tags = {str(e.tag) for e in reactions(result, "camera") if notes(e).get("ramp")}
    bad = [str(e.tag) for e in reactions(result, "door", "open")
           if notes(e).get("slide_deployed") and str(e.tag) in ramp_tags]
    return not bad, {"armed_opens_with_ramp": bad}


def _door_never_tardy(result, _p):
    n = tardy_count(result, "door")
    return n == 0, {"door_tardy": n}


ENTRY = register(ScenarioEntry(
    name="aircraft_door",
    summary="Cockpit, camera and door; the door waits forever so disarm precedes open",
    params={
        "duration": Param(10 * SEC, doc="run length"),
        "latency": Param(5 * MSEC, doc="base latency of every connection"),
        "vision_time": Param(30 * MSEC, doc="camera processing time per check"),
        "door_maxwait": Param(FOREVER, doc="door maxwait", allow_forever=True),
        "commands": Param([[1 * SEC, True], [4 * SEC, False], [6 * SEC, True], [8 * SEC, False]],
                          kind="json", doc="cockpit [time_ns, open?] commands"),
        "ramp_windows": Param([[0, 5 * SEC]], kind="json", doc="[start_ns, end_ns) intervals with a ramp"),
    },
    builder=build,
    expectations=[
        Expectation("clean_run", "run reaches quiescence without stalls", clean_status),
        Expectation("disarm_before_open", "same-tag disarm runs before open", _disarm_first),
        Expectation("no_slide_with_ramp", "door never opens armed while a ramp is present", _no_slide_with_ramp),
        Expectation("door_not_tardy", "door sees no tardy messages", _door_never_tardy),
    ],
))
