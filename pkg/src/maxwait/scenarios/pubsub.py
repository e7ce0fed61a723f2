"""Publish/subscribe and actor emulation with maxwait 0.

Two publishers emit on their own timers.  The subscriber never waits, so
it handles messages in arrival order, like a pub-sub callback or an actor
mailbox.  Messages that arrive behind an already processed tag are passed
through with their intended tag visible.
"""

from __future__ import annotations

from ..model import ConnectionSpec, FederateSpec, FederationSpec, ReactionSpec, TimerSpec, reaction_body
from ..netsim import ChannelModel, Uniform
from ..tags import MSEC, SEC
from .common import Expectation, Param, ScenarioEntry, clean_status, reactions, register


@reaction_body("pubsub.publish")
def publish(ctx):
    ctx.state["n"] += 1
    ctx.set("topic", {"from": ctx.federate, "n": ctx.state["n"]})


@reaction_body("pubsub.callback")
def callback(ctx):
    got = [ctx.get(p)["from"] for p in ("topic1", "topic2") if ctx.present(p)]
    ctx.state["received"] += len(got)
    ctx.state["order"].extend(got)
    if ctx.tardy:
        ctx.note(intended=str(ctx.intended_tag), lateness=ctx.tag.time - ctx.intended_tag.time)


def build(p: dict) -> FederationSpec:
    pubs = [
        FederateSpec(f"pub{i}", outputs=("topic",), state={"n": 0},
                     timers=[TimerSpec("t", off, p["period"])],
                     reactions=[ReactionSpec("publish", "pubsub.publish", ("t",), effects=("topic",))])
        for i, off in ((1, 0), (2, p["phase"]))
    ]
    sub = FederateSpec(
        "subscriber", inputs=("topic1", "topic2"), maxwait=0, state={"received": 0, "order": []},
        reactions=[ReactionSpec("callback", "pubsub.callback", ("topic1", "topic2"), tardy="pass_through")],
    )
    conns = [ConnectionSpec("pub1.topic", "subscriber.topic1"), ConnectionSpec("pub2.topic", "subscriber.topic2")]
    jitter = Uniform(0, p["jitter"]) if p["jitter"] else None
    return FederationSpec(
        "pubsub_actors", [*pubs, sub], conns, default_channel=ChannelModel(p["latency"], jitter),
        duration=p["duration"], metadata={"groups": []},
    )


def _all_handled(result, _p):
    sent = len(result.trace.kind("send"))
    got = sum(len(e.detail.get("inputs", {})) for e in reactions(result, "subscriber"))
    return got == sent, {"sent": sent, "handled": got}


def _intended_visible(result, _p):
    late = [e for e in reactions(result, "subscriber") if e.detail["mode"] == "tardy"]
    ok = all("intended" in e.detail for e in late)
    return ok, {"tardy_deliveries": len(late)}


ENTRY = register(ScenarioEntry(
    name="pubsub_actors",
    summary="Subscriber with maxwait 0 handles messages in arrival order; intended tags stay visible",
    params={
        "duration": Param(2 * SEC, doc="run length"),
        "latency": Param(5 * MSEC, doc="base latency"),
        "jitter": Param(30 * MSEC, doc="upper bound of uniform jitter"),
        "period": Param(100 * MSEC, doc="publish period", minimum=1),
        "phase": Param(0, doc="offset of the second publisher"),
    },
    builder=build,
    expectations=[
        Expectation("clean_run", "run reaches quiescence without stalls", clean_status),
        Expectation("every_message_handled", "pass-through handling loses nothing", _all_handled),
        Expectation("intended_tags_visible", "late messages carry their intended tag", _intended_visible),
    ],
))
