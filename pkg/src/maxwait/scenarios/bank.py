"""Replicated bank account: conservative, coordination-free and optimistic variants.

Customer requests come from a seeded random schedule rather than a user
interface.  Each ATM wrapper forwards a request, or a zero-valued null
message on its timer, to both account managers.
"""

from __future__ import annotations

import numpy as np

from ..checker import StateMachine, check_eventual_consistency, check_logical_time_consistency
from ..model import (
    ActionSpec, ConnectionSpec, FederateSpec, FederationSpec, ReactionSpec, TimerSpec,
    reaction_body,
)
from ..netsim import ChannelModel
from ..tags import FOREVER, MSEC, SEC, ZERO
from .common import (
    Expectation, Param, ScenarioEntry, clean_status, notes, reactions, register, tardy_count,
)


def request_schedule(seed: int, rate: float, duration: int, amounts: list[int],
                     avoid_period: int = 0, start: int = 100 * MSEC) -> tuple[tuple[int, int], ...]:
    """Poisson request times on a 1 ms grid with amounts drawn from ``amounts``.

    Times that coincide with a multiple of ``avoid_period`` are nudged by
    1 ms so requests never share a tag with a null message.
    """
    if rate <= 0 or not amounts:
        return ()
    rng = np.random.default_rng(seed)
    events = []
    t = float(start)
    while True:
        t += rng.exponential(SEC / rate)
        ms = int(t // MSEC) * MSEC
        if avoid_period and ms % avoid_period == 0:
            ms += MSEC
        if ms >= duration:
            break
        if events and ms <= events[-1][0]:
            continue
        events.append((ms, int(amounts[int(rng.integers(len(amounts)))])))
    return tuple(events)


def penalty_step(balance: int, value: int, penalty: int = 30) -> int:
    """One input of the conservative account manager: apply it, or charge the penalty."""
    if balance >= -value:
        return balance + value
    return balance - penalty


def acid_step(balance: int, value: int) -> int:
    return balance + value


def penalty_machine(initial: int = 0, penalty: int = 30) -> StateMachine:
    return StateMachine(initial, lambda s, v: penalty_step(s, v, penalty))


def acid_machine(initial: int = 0) -> StateMachine:
    return StateMachine(initial, acid_step)


# --- ATM wrapper -------------------------------------------------------------

@reaction_body("bank.atm_forward")
def atm_forward(ctx):
    if ctx.present("request"):
        ctx.set("received", ctx.get("request"))
    else:
        ctx.set("received", None)  # null message: advances knownness, carries no amount


@reaction_body("bank.atm_response")
def atm_response(ctx):
    ctx.state["responses"] += 1
    ctx.state["shown"] = ctx.get("response")
    if ctx.tardy:
        ctx.note(intended=str(ctx.intended_tag))


@reaction_body("bank.manager_penalty")
def manager_penalty(ctx):
    s = ctx.state
    for port in ("in1", "in2"):
        if ctx.present(port) and ctx.get(port) is not None:
            s["balance"] = penalty_step(s["balance"], ctx.get(port), ctx.params["penalty"])
    ctx.note(balance=s["balance"])
    ctx.set("out", s["balance"])


@reaction_body("bank.manager_acid")
def manager_acid(ctx):
    s = ctx.state
    for port in ("in1", "in2"):
        if ctx.present(port) and ctx.get(port) is not None:
            s["balance"] = acid_step(s["balance"], ctx.get(port))
    ctx.note(balance=s["balance"])
    ctx.set("out", s["balance"])


@reaction_body("bank.manager_acid_penalty")
def manager_acid_penalty(ctx):
    # the penalty logic run without coordination (order-sensitive)
    s = ctx.state
    for port in ("in1", "in2"):
        if ctx.present(port) and ctx.get(port) is not None:
            s["balance"] = penalty_step(s["balance"], ctx.get(port), ctx.params["penalty"])
    ctx.note(balance=s["balance"])
    ctx.set("out", s["balance"])


def atm_wrapper(fid: str, period: int, requests: tuple) -> FederateSpec:
    triggers = ("request", "t") if period else ("request",)
    timers = [TimerSpec("t", 0, period)] if period else []
    return FederateSpec(
        fid, inputs=("response",), outputs=("received",), timers=timers,
        actions=[ActionSpec("request", requests)], state={"responses": 0, "shown": None},
        reactions=[
            ReactionSpec("forward", "bank.atm_forward", triggers, effects=("received",)),
            # responses come back for tags this wrapper has usually moved past
            ReactionSpec("response", "bank.atm_response", ("response",), tardy="pass_through"),
        ],
    )


def _bank(name: str, p: dict, manager_body: str, manager_maxwait, tardy: str) -> FederationSpec:
    period = p["null_period"]
    amounts = list(p["amounts"])
    schedules = p.get("schedules") or [
        request_schedule(p["request_seed"] + i, p["request_rate"], p["duration"], amounts, period)
        for i in range(2)
    ]
    feds = [atm_wrapper(f"w{i + 1}", period, tuple(map(tuple, schedules[i]))) for i in range(2)]
    for mid in ("a1", "a2"):
        feds.append(FederateSpec(
            mid, inputs=("in1", "in2"), outputs=("out",), maxwait=manager_maxwait,
            state={"balance": p["initial_balance"]},
            reactions=[ReactionSpec("update", manager_body, ("in1", "in2"), effects=("out",),
                                    tardy=tardy, params={"penalty": p["penalty"]})],
        ))
    conns = [
        ConnectionSpec("w1.received", "a1.in1"),
        ConnectionSpec("w2.received", "a2.in2"),
        ConnectionSpec("w1.received", "a2.in1"),
        ConnectionSpec("w2.received", "a1.in2"),
        # a manager's answer for tag t is read by the wrapper at the next microstep
        ConnectionSpec("a1.out", "w1.response", after=ZERO),
        ConnectionSpec("a2.out", "w2.response", after=ZERO),
    ]
    return FederationSpec(
        name, feds, conns, default_channel=ChannelModel(p["latency"]), duration=p["duration"],
        metadata={
            "groups": [["a1", "a2"]],
            "availability": {"pairs": [{"request": "a1.in1"}, {"request": "a2.in2"}]},
        },
    )


def _group_logical(result, _p):
    v = check_logical_time_consistency(result.trace, ["a1", "a2"])
    return v.passed, v.to_dict()


def _group_eventual(result, _p):
    v = check_eventual_consistency(result.trace, ["a1", "a2"])
    return v.passed, v.to_dict()


def _managers_not_tardy(result, _p):
    n = tardy_count(result, "a1") + tardy_count(result, "a2")
    return n == 0, {"manager_tardy": n}


def _common_params(duration: int) -> dict[str, Param]:
    return {
        "duration": Param(duration, doc="run length"),
        "latency": Param(5 * MSEC, doc="base latency of every connection"),
        "null_period": Param(1 * SEC, doc="ATM null-message timer period (0 disables it)", minimum=0),
        "penalty": Param(30, kind="int", doc="overdraft penalty", minimum=0),
        "initial_balance": Param(0, kind="int", doc="starting balance"),
        "request_rate": Param(0.5, kind="float", doc="customer requests per second per ATM", minimum=0.0),
        "request_seed": Param(7, kind="int", doc="seed of the request schedule"),
        "amounts": Param([50, 20, -30, -60], kind="json", doc="request amounts to draw from"),
        "schedules": Param(None, kind="json", doc="explicit [[time_ns, amount], ...] per ATM"),
    }


def build_conservative(p: dict) -> FederationSpec:
    return _bank("bank_conservative", p, "bank.manager_penalty", FOREVER, "none")


CONSERVATIVE = register(ScenarioEntry(
    name="bank_conservative",
    summary="Two account managers with overdraft penalty, maxwait forever, ATM null messages",
    params=_common_params(20 * SEC),
    builder=build_conservative,
    expectations=[
        Expectation("clean_run", "run reaches quiescence without stalls", clean_status),
        Expectation("logical_time_consistency", "a1 and a2 agree at every tag", _group_logical),
        Expectation("no_stp_at_managers", "no tardy message at a maxwait-forever manager", _managers_not_tardy),
    ],
))


def build_acid(p: dict) -> FederationSpec:
    if p["deposits"] is not None and not p.get("schedules"):
        # deposits alternate between the ATMs, spaced closely enough to race
        sched: list[list] = [[], []]
        for i, amount in enumerate(p["deposits"]):
            sched[i % 2].append([p["deposit_start"] + i * p["deposit_spacing"], int(amount)])
        p = {**p, "schedules": sched}
    body = "bank.manager_acid" if p["reducer"] == "acid" else "bank.manager_acid_penalty"
    return _bank("bank_acid", p, body, 0, "pass_through")


def _acid_final_balance(result, p):
    if p["reducer"] != "acid" or p["deposits"] is None:
        return True, {"skipped": "checked only for the acid reducer with explicit deposits"}
    expected = int(sum(p["deposits"])) + p["initial_balance"]
    got = {}
    for a in ("a1", "a2"):
        evs = reactions(result, a)
        got[a] = notes(evs[-1]).get("balance") if evs else p["initial_balance"]
    return all(v == expected for v in got.values()), {"expected": expected, "final": got}


ACID = register(ScenarioEntry(
    name="bank_acid",
    summary="Coordination-free managers (maxwait 0, pass-through tardy handling)",
    params={
        **_common_params(5 * SEC),
        "request_rate": Param(0.0, kind="float", doc="random requests per second per ATM", minimum=0.0),
        "deposits": Param([10, 20, -5], kind="json", doc="explicit deposits alternating between ATMs"),
        "deposit_start": Param(1 * SEC, doc="time of the first deposit"),
        "deposit_spacing": Param(10 * MSEC, doc="spacing between deposits"),
        "reducer": Param("acid", kind="str", doc="manager logic", choices=("acid", "penalty")),
    },
    builder=build_acid,
    expectations=[
        Expectation("clean_run", "run reaches quiescence without stalls", clean_status),
        Expectation("eventual_consistency", "a1 and a2 end in the same state", _group_eventual),
        Expectation("final_balance", "both replicas end at the sum of the deposits", _acid_final_balance),
    ],
))


# --- optimistic bank -------------------------------------------------------------

@reaction_body("bank.opt_true_balance")
def opt_true_balance(ctx):
    s = ctx.state
    v = ctx.get("true_balance")
    s["true_balance"] = v["balance"]
    s["as_of"] = v["as_of"]
    # keep only own transactions the true balance has not seen yet
    s["own"] = [[t, a] for t, a in s["own"] if t > v["as_of"]]
    s["estimate"] = s["true_balance"] + sum(a for _, a in s["own"])
    ctx.note(consistent_as_of=s["as_of"])
    if ctx.tardy:
        ctx.note(stp_violation=str(ctx.intended_tag))


@reaction_body("bank.opt_request")
def opt_request(ctx):
    s = ctx.state
    tick = ctx.present("null")
    amount = 0
    if ctx.present("request"):
        want = ctx.get("request")
        if s["estimate"] + want >= 0:
            amount = want
            ctx.note(granted=True)
        else:
            amount = -ctx.params["penalty"]
            ctx.note(granted=False)
        ctx.note(consistent_as_of=s["as_of"], estimate=s["estimate"])
    if amount:
        s["own"].append([ctx.tag.time, amount])
        s["estimate"] += amount
    ctx.set("tx", {"amount": amount, "tick": tick})


@reaction_body("bank.opt_watchdog")
def opt_watchdog(ctx):
    # a true balance is expected at every tick after the first feedback delay
    if ctx.tag.time >= ctx.params["feedback_delay"] and not ctx.present("true_balance"):
        ctx.note(fault="true_balance missing")


@reaction_body("bank.opt_balance")
def opt_balance(ctx):
    s = ctx.state
    tick = False
    for port in ("in1", "in2"):
        if ctx.present(port):
            tx = ctx.get(port)
            s["balance"] += tx["amount"]
            tick = tick or tx["tick"]
    if tick:
        ctx.set("balance", {"balance": s["balance"], "as_of": ctx.tag.time})


def build_optimistic(p: dict) -> FederationSpec:
    period = p["null_period"]
    amounts = list(p["amounts"])
    feds = []
    for i, am in enumerate(("am1", "am2")):
        sched = request_schedule(p["request_seed"] + i, p["request_rate"], p["duration"], amounts, period)
        feds.append(FederateSpec(
            am, inputs=("true_balance",), outputs=("tx",), maxwait=p["maxwait"],
            timers=[TimerSpec("null", 0, period)], actions=[ActionSpec("request", sched)],
            state={"true_balance": p["initial_balance"], "as_of": 0, "estimate": p["initial_balance"],
                   "own": []},
            reactions=[
                ReactionSpec("true_balance", "bank.opt_true_balance", ("true_balance",),
                             tardy="handler", tardy_handler="bank.opt_true_balance"),
                ReactionSpec("request", "bank.opt_request", ("request", "null"), effects=("tx",),
                             params={"penalty": p["penalty"]}),
                ReactionSpec("watchdog", "bank.opt_watchdog", ("null",), uses=("true_balance",),
                             params={"feedback_delay": p["feedback_delay"]}),
            ],
        ))
    for b in ("b1", "b2"):
        feds.append(FederateSpec(
            b, inputs=("in1", "in2"), outputs=("balance",), maxwait=FOREVER,
            state={"balance": p["initial_balance"]},
            reactions=[ReactionSpec("update", "bank.opt_balance", ("in1", "in2"), effects=("balance",))],
        ))
    conns = [
        ConnectionSpec("am1.tx", "b1.in1"),
        ConnectionSpec("am1.tx", "b2.in1"),
        ConnectionSpec("am2.tx", "b1.in2"),
        ConnectionSpec("am2.tx", "b2.in2"),
        ConnectionSpec("b1.balance", "am1.true_balance", after=p["feedback_delay"]),
        ConnectionSpec("b2.balance", "am2.true_balance", after=p["feedback_delay"]),
    ]
    return FederationSpec(
        "bank_optimistic", feds, conns, default_channel=ChannelModel(p["latency"]),
        duration=p["duration"],
        metadata={
            "groups": [["b1", "b2"]],
            "availability": {
                "pairs": [{"request": "am1.request"}, {"request": "am2.request"}],
                "staleness_key": "consistent_as_of",
            },
        },
    )


def response_latencies(result) -> list[int]:
    out = []
    for am in ("am1", "am2"):
        for e in reactions(result, am, "request"):
            if "request" in e.detail.get("inputs", {}):
                out.append(e.local_time - e.tag.time)
    return out


def staleness(result) -> list[int]:
    out = []
    for am in ("am1", "am2"):
        for e in reactions(result, am, "request"):
            n = notes(e)
            if "consistent_as_of" in n:
                out.append(e.tag.time - int(n["consistent_as_of"]))
    return out


def _opt_latency(result, p):
    lat = response_latencies(result)
    worst = max(lat, default=0)
    return worst <= p["maxwait"], {"max_response_latency": worst, "requests": len(lat)}


def _opt_staleness(result, p):
    st = staleness(result)
    worst = max(st, default=0)
    bound = p["feedback_delay"] + p["null_period"]
    return worst <= bound, {"max_staleness": worst, "bound": bound}


def _opt_no_stp(result, _p):
    n = tardy_count(result, "am1") + tardy_count(result, "am2")
    return n == 0, {"stp_violations": n}


def _opt_balances(result, _p):
    v = check_logical_time_consistency(result.trace, ["b1", "b2"])
    return v.passed, v.to_dict()


OPTIMISTIC = register(ScenarioEntry(
    name="bank_optimistic",
    summary="Managers answer within maxwait 30 ms; true balance fed back after a 10 s logical delay",
    params={
        "duration": Param(60 * SEC, doc="run length"),
        "latency": Param(50 * MSEC, doc="base latency of every connection"),
        "maxwait": Param(30 * MSEC, doc="account manager maxwait"),
        "feedback_delay": Param(10 * SEC, doc="logical delay on the true-balance feedback", minimum=1),
        "null_period": Param(10 * SEC, doc="account manager null-message period", minimum=1),
        "penalty": Param(30, kind="int", doc="overdraft penalty", minimum=0),
        "initial_balance": Param(100, kind="int", doc="starting balance"),
        "request_rate": Param(0.5, kind="float", doc="customer requests per second per manager", minimum=0.0),
        "request_seed": Param(11, kind="int", doc="seed of the request schedule"),
        "amounts": Param([50, 20, -30, -60], kind="json", doc="request amounts to draw from"),
    },
    builder=build_optimistic,
    expectations=[
        Expectation("clean_run", "run reaches quiescence without stalls", clean_status),
        Expectation("bounded_unavailability", "every request answered within maxwait", _opt_latency),
        Expectation("bounded_staleness", "true balance never older than delay + null period", _opt_staleness),
        Expectation("no_stp_at_managers", "no tardy true balance at the managers", _opt_no_stp),
        Expectation("balances_consistent", "b1 and b2 agree at every tag", _opt_balances),
    ],
))

