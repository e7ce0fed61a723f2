"""Logical execution time: a 100 Hz fast loop fed by a slow state estimator.

The estimator buffers ten samples, computes for a configurable time and
sends its estimate over a connection with a 100 ms logical delay.  A
(200 ms, 100 ms) timer in the fast loop checks that each estimate is
present when its tag comes up; if not, the computation overran its
logical execution time.
"""

from __future__ import annotations

from ..model import ConnectionSpec, FederateSpec, FederationSpec, ReactionSpec, TimerSpec, reaction_body
from ..netsim import ChannelModel
from ..tags import FOREVER, MSEC, SEC, parse_tag
from .common import Expectation, Param, ScenarioEntry, clean_status, notes, reactions, register


@reaction_body("let.estimate_in")
def estimate_in(ctx):
    est = ctx.get("estimate")
    ctx.state["estimate"] = est["value"]
    ctx.state["estimates"] += 1
    ctx.note(batch_tag=est["batch_tag"])
    if ctx.tardy:
        ctx.note(late=str(ctx.intended_tag))


@reaction_body("let.sense")
def sense(ctx):
    k = ctx.tag.time // ctx.params["period"]
    ctx.set("sample", {"k": int(k), "value": float(k % 17)})


@reaction_body("let.check")
def check(ctx):
    if not ctx.present("estimate"):
        ctx.state["violations"] += 1
        ctx.note(violation="estimate missing")


@reaction_body("let.buffer")
def buffer(ctx):
    s = ctx.state
    s["buffer"].append(ctx.get("sample")["value"])
    if len(s["buffer"]) == ctx.params["batch"]:
        value = sum(s["buffer"]) / len(s["buffer"])
        s["buffer"] = []
        ctx.spend(ctx.params["compute_time"])
        ctx.set("estimate", {"value": value, "batch_tag": ctx.tag.time})


def build(p: dict) -> FederationSpec:
    period = p["period"]
    fast = FederateSpec(
        "fastloop", inputs=("estimate",), outputs=("sample",), maxwait=0,
        timers=[TimerSpec("sense", period, period), TimerSpec("check", p["check_offset"], p["let"])],
        state={"estimate": None, "estimates": 0, "violations": 0},
        reactions=[
            ReactionSpec("estimate", "let.estimate_in", ("estimate",), tardy="pass_through"),
            ReactionSpec("sense", "let.sense", ("sense",), effects=("sample",), params={"period": period}),
            ReactionSpec("check", "let.check", ("check",), uses=("estimate",)),
        ],
    )
    estimator = FederateSpec(
        "estimator", inputs=("sample",), outputs=("estimate",), maxwait=FOREVER,
        state={"buffer": []},
        reactions=[ReactionSpec("calculate", "let.buffer", ("sample",), effects=("estimate",),
                                params={"batch": p["batch"], "compute_time": p["compute_time"]})],
    )
    conns = [
        ConnectionSpec("fastloop.sample", "estimator.sample"),
        ConnectionSpec("estimator.estimate", "fastloop.estimate", after=p["let"]),
    ]
    return FederationSpec(
        "let_pattern", [fast, estimator], conns, default_channel=ChannelModel(p["latency"]),
        duration=p["duration"], metadata={"groups": []},
    )


def estimate_offsets(result) -> list[tuple[str, int]]:
    """(delivered tag, delivered tag minus batch tag) for every estimate sent."""
    out = []
    for e in result.trace.of("estimator", "send"):
        dest = e.detail["dest_tag"]
        batch = e.tag.time
        out.append((dest, parse_tag(dest).time - batch))
    return out


def _let_property(result, p):
    offs = estimate_offsets(result)
    ok = all(d == p["let"] for _, d in offs)
    recv = reactions(result, "fastloop", "estimate")
    ok = ok and all(e.tag.time - notes(e)["batch_tag"] == p["let"] for e in recv if e.detail["mode"] == "normal")
    return ok, {"estimates": len(offs)}


def _violations_match(result, p):
    n = sum(1 for e in reactions(result, "fastloop", "check") if notes(e).get("violation"))
    expect = p["compute_time"] + 2 * p["latency"] > p["let"]
    return (n > 0) == expect, {"violations": n, "overrun_expected": expect}


ENTRY = register(ScenarioEntry(
    name="let_pattern",
    summary="100 Hz fast loop, 10-sample estimator with a 100 ms logical execution time",
    params={
        "duration": Param(2 * SEC, doc="run length"),
        "latency": Param(5 * MSEC, doc="base latency of every connection"),
        "period": Param(10 * MSEC, doc="fast loop period", minimum=1),
        "batch": Param(10, kind="int", doc="samples per estimate", minimum=1),
        "compute_time": Param(50 * MSEC, doc="physical time of one estimate computation", minimum=0),
        "let": Param(100 * MSEC, doc="logical execution time (after delay)", minimum=1),
        "check_offset": Param(200 * MSEC, doc="offset of the timing-check timer"),
    },
    builder=build,
    expectations=[
        Expectation("clean_run", "run reaches quiescence without stalls", clean_status),
        Expectation("let_property", "estimate tag = batch tag + LET", _let_property),
        Expectation("timing_check", "check fires iff compute plus latency exceeds the LET", _violations_match),
    ],
))
