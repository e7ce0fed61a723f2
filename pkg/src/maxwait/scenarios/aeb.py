"""Automatic emergency braking with lidar (50 ms) and radar (100 ms) sensors.

The controller fuses both sensors at even multiples of 50 ms and uses the
lidar alone at odd multiples.  It waits up to 50 ms when two inputs are
expected and not at all when one is, switching with ``set_maxwait``.  A
separate detector is triggered by its own 50 ms timer and only *uses* the
sensor inputs, so a missing input is noticed within its maxwait.  Object
detection is threshold logic over a scripted approaching obstacle.
"""

from __future__ import annotations

from ..model import ConnectionSpec, FederateSpec, FederationSpec, ReactionSpec, TimerSpec, reaction_body
from ..netsim import ChannelModel, inject_spike
from ..tags import MSEC, SEC
from .common import Expectation, Param, ScenarioEntry, clean_status, notes, reactions, register

PERIOD = 50 * MSEC


def obstacle_distance(t: int, params: dict) -> float:
    """Scripted distance in metres to an obstacle approaching at constant speed."""
    return max(0.0, params["start_distance"] - params["closing_speed"] * t / SEC)


@reaction_body("aeb.sense")
def sense(ctx):
    d = obstacle_distance(ctx.tag.time, ctx.params) + ctx.params.get("bias", 0.0)
    ctx.set(ctx.params["port"], round(d, 3))


def _instant(ctx) -> int:
    return ctx.tag.time // PERIOD


@reaction_body("aeb.control")
def control(ctx):
    n = _instant(ctx)
    lid, rad = ctx.present("lid"), ctx.present("rad")
    if n % 2 == 0:
        mode = "fusion" if lid and rad else "radar_only" if rad else "lidar_only" if lid else "fault"
    else:
        mode = "lidar_only" if lid and not rad else "fault"
    th = ctx.params["threshold"]
    if mode == "fusion":
        brake = ctx.get("lid") < th and ctx.get("rad") < th
    elif mode == "radar_only":
        brake = ctx.get("rad") < th
    elif mode == "lidar_only":
        brake = ctx.get("lid") < th
    else:
        brake = False
    if brake:
        ctx.state["brake_requests"] += 1
    ctx.note(mode=mode)
    ctx.set("brake", {"brake": bool(brake), "mode": mode})
    # two inputs are expected at the next instant iff it is even
    ctx.set_maxwait(ctx.params["fusion_wait"] if (n + 1) % 2 == 0 else 0)


@reaction_body("aeb.control_tardy")
def control_tardy(ctx):
    # stale sensor data is logged and discarded; never actuate from it
    ctx.state["tardy_inputs"] += 1
    ctx.note(tardy=ctx.present_names, intended=str(ctx.intended_tag))


@reaction_body("aeb.detect")
def detect(ctx):
    n = _instant(ctx)
    lid, rad = ctx.present("lid"), ctx.present("rad")
    missing = []
    if not lid:
        missing.append("lid")
    if n % 2 == 0 and not rad:
        missing.append("rad")
    if n % 2 == 1 and rad:
        ctx.note(unexpected="rad")
    if missing:
        ctx.state["faults"] += 1
        ctx.note(fault="missing " + "+".join(missing))


@reaction_body("aeb.detect_tardy")
def detect_tardy(ctx):
    ctx.note(tardy=ctx.present_names, intended=str(ctx.intended_tag))


@reaction_body("aeb.brake")
def brake(ctx):
    cmd = ctx.get("cmd")
    if cmd["brake"] and not ctx.state["braking"]:
        ctx.state["braking"] = True
        ctx.note(actuated=True)
    ctx.note(lag=ctx.local_time - ctx.tag.time)


@reaction_body("aeb.brake_late")
def brake_late(ctx):
    ctx.state["late_commands"] += 1
    ctx.note(deadline_missed=ctx.local_time - ctx.tag.time)


def build(p: dict) -> FederationSpec:
    sensor = {"start_distance": p["start_distance"], "closing_speed": p["closing_speed"]}
    lidar = FederateSpec(
        "lidar", outputs=("lid",), timers=[TimerSpec("t", 0, PERIOD)],
        reactions=[ReactionSpec("sample", "aeb.sense", ("t",), effects=("lid",),
                                params={**sensor, "port": "lid"})],
    )
    radar = FederateSpec(
        "radar", outputs=("rad",), timers=[TimerSpec("t", 0, 2 * PERIOD)],
        reactions=[ReactionSpec("sample", "aeb.sense", ("t",), effects=("rad",),
                                params={**sensor, "port": "rad", "bias": 0.5})],
    )
    controller = FederateSpec(
        "controller", inputs=("lid", "rad"), outputs=("brake",), maxwait=p["fusion_wait"],
        state={"brake_requests": 0, "tardy_inputs": 0},
        reactions=[ReactionSpec("control", "aeb.control", ("lid", "rad"), effects=("brake",),
                                tardy="handler", tardy_handler="aeb.control_tardy",
                                params={"threshold": p["threshold"], "fusion_wait": p["fusion_wait"]})],
    )
    detector = FederateSpec(
        "detector", inputs=("lid", "rad"), maxwait=p["detector_maxwait"],
        timers=[TimerSpec("t", 0, PERIOD)], state={"faults": 0},
        reactions=[ReactionSpec("detect", "aeb.detect", ("t",), uses=("lid", "rad"),
                                tardy="handler", tardy_handler="aeb.detect_tardy")],
    )
    brake_fed = FederateSpec(
        "brake", inputs=("cmd",), state={"braking": False, "late_commands": 0},
        reactions=[ReactionSpec("actuate", "aeb.brake", ("cmd",), deadline=p["brake_deadline"],
                                deadline_handler="aeb.brake_late")],
    )
    conns = [
        ConnectionSpec("lidar.lid", "controller.lid"),
        ConnectionSpec("radar.rad", "controller.rad"),
        ConnectionSpec("lidar.lid", "detector.lid"),
        ConnectionSpec("radar.rad", "detector.rad"),
        ConnectionSpec("controller.brake", "brake.cmd"),
    ]
    base = ChannelModel(p["latency"])
    channels = {"controller.brake->brake.cmd": ChannelModel(p["brake_latency"])}
    if p["lidar_spike"]:
        for cid in ("lidar.lid->controller.lid", "lidar.lid->detector.lid"):
            channels[cid] = inject_spike(base, p["spike_start"], p["spike_end"], p["lidar_spike"])
    return FederationSpec(
        "aeb", [lidar, radar, controller, detector, brake_fed], conns, channels=channels,
        default_channel=base, duration=p["duration"],
        metadata={"groups": [], "detector_maxwait": p["detector_maxwait"]},
    )


def _detection_bounded(result, p):
    worst = 0
    events = []
    for e in reactions(result, "detector", "detect"):
        if notes(e).get("fault"):
            lag = e.local_time - e.tag.time
            worst = max(worst, lag)
            events.append([str(e.tag), lag])
    return worst <= p["detector_maxwait"], {"max_detection_latency": worst, "faults": events}


def _deadline_respected(result, p):
    n = len(result.trace.of("brake", "deadline_violation"))
    if p["lidar_spike"] or p["brake_latency"] + p["latency"] > p["brake_deadline"]:
        return True, {"skipped": "fault injected", "violations": n}
    return n == 0, {"violations": n}


def _alternating_maxwait(result, p):
    seen = {}
    for e in reactions(result, "controller", "control"):
        if "set_maxwait" in e.detail:
            seen[str(e.tag)] = e.detail["set_maxwait"]
    return len(set(seen.values())) >= 2, {"settings": len(set(seen.values())), "values": sorted(set(seen.values()))}


ENTRY = register(ScenarioEntry(
    name="aeb",
    summary="Lidar/radar fusion with alternating maxwait, timer-driven fault detector, brake deadline",
    params={
        "duration": Param(2 * SEC, doc="run length"),
        "latency": Param(5 * MSEC, doc="base latency of every connection"),
        "brake_latency": Param(5 * MSEC, doc="latency of controller->brake"),
        "fusion_wait": Param(50 * MSEC, doc="controller maxwait when both sensors are expected"),
        "detector_maxwait": Param(50 * MSEC, doc="detector maxwait"),
        "brake_deadline": Param(50 * MSEC, doc="deadline of the brake reaction", minimum=0),
        "threshold": Param(10.0, kind="float", doc="brake when an obstacle is closer than this (m)"),
        "start_distance": Param(40.0, kind="float", doc="obstacle distance at time 0 (m)"),
        "closing_speed": Param(20.0, kind="float", doc="closing speed (m/s)"),
        "lidar_spike": Param(0, doc="extra latency on lidar links during the spike window", minimum=0),
        "spike_start": Param(100 * MSEC, doc="spike window start (send time)"),
        "spike_end": Param(160 * MSEC, doc="spike window end (send time)"),
    },
    builder=build,
    expectations=[
        Expectation("clean_run", "run reaches quiescence without stalls", clean_status),
        Expectation("bounded_detection", "missing inputs noticed within the detector maxwait", _detection_bounded),
        Expectation("brake_deadline", "no deadline violation under default latencies", _deadline_respected),
        Expectation("dynamic_maxwait", "controller switches maxwait with set_maxwait", _alternating_maxwait),
    ],
))
