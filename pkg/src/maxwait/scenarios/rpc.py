"""Remote procedure calls with futures.

A requestor triggers the delegator once per second.  The delegator's first
reaction forwards the request to two workers right away (maxwait 0); its
second reaction waits on the worker responses, which arrive at the request
tag.  ``absent_after`` on the response connections bounds that wait; with
``forever`` the second reaction blocks like a future until both answers
are in.
"""

from __future__ import annotations

from ..model import ConnectionSpec, FederateSpec, FederationSpec, ReactionSpec, TimerSpec, reaction_body
from ..netsim import ChannelModel
from ..tags import FOREVER, MSEC, SEC
from .common import Expectation, Param, ScenarioEntry, clean_status, notes, reactions, register


@reaction_body("rpc.request")
def request(ctx):
    ctx.state["n"] += 1
    ctx.set("out", ctx.state["n"])


@reaction_body("rpc.delegate")
def delegate(ctx):
    ctx.set("req", ctx.get("trigger"))


@reaction_body("rpc.collect")
def collect(ctx):
    if not ctx.present("trigger"):
        return
    if ctx.present("resp1") and ctx.present("resp2"):
        result = ctx.get("resp1") + ctx.get("resp2")
        ctx.note(result=result)
    else:
        # one or both responses are absent: the result is zero
        result = 0
        missing = [p for p in ("resp1", "resp2") if not ctx.present(p)]
        ctx.state["failures"] += 1
        ctx.note(result=0, absent=missing, fault="workers did not respond on time")
    ctx.set("result", result)


@reaction_body("rpc.collect_tardy")
def collect_tardy(ctx):
    ctx.state["tardy_responses"] += 1
    ctx.note(tardy=ctx.present_names, intended=str(ctx.intended_tag))


@reaction_body("rpc.work")
def work(ctx):
    ctx.spend(ctx.params["delay"])
    ctx.set("out", ctx.get("req") * ctx.params["factor"])


@reaction_body("rpc.consume")
def consume(ctx):
    ctx.state["results"].append(ctx.get("result"))


def build(p: dict) -> FederationSpec:
    requestor = FederateSpec(
        "requestor", outputs=("out",), timers=[TimerSpec("t", p["offset"], p["period"])], state={"n": 0},
        reactions=[ReactionSpec("request", "rpc.request", ("t",), effects=("out",))],
    )
    delegator = FederateSpec(
        "delegator", inputs=("trigger", "resp1", "resp2"), outputs=("req", "result"), maxwait=0,
        state={"failures": 0, "tardy_responses": 0},
        reactions=[
            ReactionSpec("delegate", "rpc.delegate", ("trigger",), effects=("req",)),
            ReactionSpec("collect", "rpc.collect", ("trigger", "resp1", "resp2"), effects=("result",),
                         tardy="handler", tardy_handler="rpc.collect_tardy"),
        ],
    )
    workers = [
        FederateSpec(
            w, inputs=("req",), outputs=("out",), maxwait=0,
            reactions=[ReactionSpec("work", "rpc.work", ("req",), effects=("out",),
                                    params={"delay": delay, "factor": factor})],
        )
        for w, delay, factor in (("w1", p["worker1_delay"], 2), ("w2", p["worker2_delay"], 3))
    ]
    consumer = FederateSpec(
        "consumer", inputs=("result",), state={"results": []},
        reactions=[ReactionSpec("consume", "rpc.consume", ("result",))],
    )
    conns = [
        ConnectionSpec("requestor.out", "delegator.trigger"),
        ConnectionSpec("delegator.req", "w1.req"),
        ConnectionSpec("delegator.req", "w2.req"),
        ConnectionSpec("w1.out", "delegator.resp1", absent_after=p["absent_after"]),
        ConnectionSpec("w2.out", "delegator.resp2", absent_after=p["absent_after"]),
        ConnectionSpec("delegator.result", "consumer.result"),
    ]
    return FederationSpec(
        "rpc_futures", [requestor, delegator, *workers, consumer], conns,
        default_channel=ChannelModel(p["latency"]), duration=p["duration"], metadata={"groups": []},
    )


def results(result) -> list[tuple[int, int]]:
    """(request tag time, delegator result) per collect invocation."""
    return [(e.tag.time, notes(e)["result"]) for e in reactions(result, "delegator", "collect")
            if e.detail["mode"] == "normal" and "result" in notes(e)]


def _results_expected(result, p):
    # trigger, request and response hops all count against the timeout
    timely = max(p["worker1_delay"], p["worker2_delay"]) + 3 * p["latency"] <= p["absent_after"]
    got = results(result)
    if timely:
        ok = all(r == 5 * (i + 1) for i, (_, r) in enumerate(got))
    else:
        ok = all(r == 0 for _, r in got)
    return ok and bool(got), {"results": [r for _, r in got][:5], "timely": timely}


def _never_absent_when_forever(result, p):
    if p["absent_after"] != FOREVER:
        return True, {"skipped": "absent_after is finite"}
    absent = len(result.trace.of("delegator", "absent_assumed"))
    return absent == 0, {"absent_assumed": absent}


ENTRY = register(ScenarioEntry(
    name="rpc_futures",
    summary="Delegator with maxwait 0 waits on worker responses via absent_after",
    params={
        "duration": Param(5 * SEC, doc="run length"),
        "latency": Param(5 * MSEC, doc="base latency of every connection"),
        "period": Param(1 * SEC, doc="request period", minimum=1),
        "offset": Param(0, doc="first request time"),
        "worker1_delay": Param(20 * MSEC, doc="worker 1 compute time", minimum=0),
        "worker2_delay": Param(30 * MSEC, doc="worker 2 compute time", minimum=0),
        "absent_after": Param(100 * MSEC, doc="timeout on worker responses", allow_forever=True),
    },
    builder=build,
    expectations=[
        Expectation("clean_run", "run reaches quiescence without stalls", clean_status),
        Expectation("results", "sum when both workers are timely, otherwise zero", _results_expected),
        Expectation("futures_block", "absent_after forever never assumes absence", _never_absent_when_forever),
    ],
))
