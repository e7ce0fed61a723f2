"""Post-hoc checks over run traces.

Replica groups are sets of federates that run the same deterministic
state machine.  Logical-time consistency asks that they go through the
same states at the same tags; eventual consistency only asks that, having
seen the same messages, they end in the same state.
:func:`permutation_oracle` decides order-insensitivity of a reducer by
brute force over every ordering of a small message multiset.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .tags import parse_tag
from .trace import Trace, TraceEvent, digest

PASS = "PASS"
FAIL = "FAIL"
INCONCLUSIVE = "INCONCLUSIVE"

MAX_ORACLE_MESSAGES = 8

Traces = Union[Trace, Sequence[Trace]]


@dataclass
class Verdict:
    check: str
    verdict: str
    group: list[str]
    reason: str = ""
    divergence: Optional[dict[str, Any]] = None

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_dict(self) -> dict[str, Any]:
        out = {"check": self.check, "verdict": self.verdict, "group": self.group}
        if self.reason:
            out["reason"] = self.reason
        if self.divergence is not None:
            out["divergence"] = self.divergence
        return out


def _as_list(traces: Traces) -> list[Trace]:
    return [traces] if isinstance(traces, Trace) else list(traces)


def _events_of(traces: list[Trace], fed: str) -> list[TraceEvent]:
    # a federate's events live in exactly one trace
    for tr in traces:
        evs = tr.of(fed)
        if evs or fed in tr.meta.get("federates", {}):
            return evs
    return []


def malformed_deliveries(trace: Trace) -> list[str]:
    """Deliveries of two messages with one tag on one port (impossible with one source)."""
    seen: set[tuple[str, str, str]] = set()
    dupes = []
    for e in trace.kind("deliver"):
        key = (e.federate, e.port or "", str(e.tag))
        if key in seen:
            dupes.append(f"{e.federate}.{e.port}@{e.tag}")
        seen.add(key)
    return dupes


def reaction_signature(events: Iterable[TraceEvent]) -> list[tuple]:
    """Per-reaction ``(tag, reaction, mode, input digests, state digest)`` sequence."""
    sig = []
    for e in events:
        if e.kind != "reaction":
            continue
        d = e.detail
        sig.append((str(e.tag), d.get("reaction"), d.get("mode"),
                    tuple(sorted(d.get("inputs", {}).items())), e.state_digest))
    return sig


def check_logical_time_consistency(traces: Traces, group: Sequence[str]) -> Verdict:
    traces = _as_list(traces)
    group = list(group)
    name = "logical_time_consistency"
    for tr in traces:
        dupes = malformed_deliveries(tr)
        if dupes:
            return Verdict(name, INCONCLUSIVE, group, f"malformed trace: duplicate deliveries {dupes[:3]}")
    sigs = {}
    for fed in group:
        sig = reaction_signature(_events_of(traces, fed))
        if any(s[4] is None for s in sig):
            return Verdict(name, INCONCLUSIVE, group, f"missing state digests for {fed}")
        sigs[fed] = sig
    if len(group) < 2:
        return Verdict(name, PASS, group, "single member")
    ref_fed = group[0]
    ref = sigs[ref_fed]
    for other in group[1:]:
        sig = sigs[other]
        for i in range(max(len(ref), len(sig))):
            a = ref[i] if i < len(ref) else None
            b = sig[i] if i < len(sig) else None
            if a != b:
                tag = (a or b)[0]
                return Verdict(name, FAIL, group, f"{ref_fed} and {other} diverge at tag {tag}",
                               {"index": i, "tag": tag, ref_fed: _sig_dict(a), other: _sig_dict(b)})
    return Verdict(name, PASS, group)


def _sig_dict(s: Optional[tuple]) -> Optional[dict[str, Any]]:
    if s is None:
        return None
    return {"tag": s[0], "reaction": s[1], "mode": s[2], "inputs": dict(s[3]), "state": s[4]}


def final_state_digest(trace: Trace, fed: str) -> Optional[str]:
    if trace.end is not None:
        info = trace.end.get("federates", {}).get(fed)
        if info and "final_state" in info:
            return info["final_state"]
    states = [e.state_digest for e in trace.of(fed, "reaction") if e.state_digest]
    if states:
        return states[-1]
    return trace.meta.get("federates", {}).get(fed, {}).get("initial_state")


def undelivered_to(trace: Trace, feds: Iterable[str]) -> dict[str, int]:
    """Messages sent to each federate that never reached it."""
    feds = list(feds)
    sent = {f: 0 for f in feds}
    got = {f: 0 for f in feds}
    for e in trace.kind("send"):
        dest = str(e.detail.get("dest", "")).split(".")[0]
        if dest in sent:
            sent[dest] += 1
    for e in trace.kind("deliver"):
        if e.federate in got:
            got[e.federate] += 1
    return {f: sent[f] - got[f] for f in feds if sent[f] != got[f]}


def check_eventual_consistency(traces: Traces, group: Sequence[str]) -> Verdict:
    traces = _as_list(traces)
    group = list(group)
    name = "eventual_consistency"
    finals = {}
    for fed in group:
        tr = next((t for t in traces if fed in t.meta.get("federates", {})), None)
        if tr is None:
            return Verdict(name, INCONCLUSIVE, group, f"no trace contains {fed}")
        if tr.truncated:
            return Verdict(name, INCONCLUSIVE, group, f"trace {tr.source} is truncated (no end record)")
        missing = undelivered_to(tr, [fed])
        if missing:
            return Verdict(name, INCONCLUSIVE, group,
                           f"{fed} did not receive {missing[fed]} message(s) sent to it")
        finals[fed] = final_state_digest(tr, fed)
    if len(set(finals.values())) <= 1:
        return Verdict(name, PASS, group)
    return Verdict(name, FAIL, group, "final states differ", {"final_states": finals})


@dataclass
class StateMachine:
    """A deterministic state machine ``(s0, r)`` used by the permutation oracle."""

    initial: Any
    transition: Callable[[Any, Any], Any]
    digest: Callable[[Any], str] = digest

    def run(self, messages: Iterable[Any]) -> Any:
        state = self.initial
        for m in messages:
            state = self.transition(state, m)
        return state


def permutation_oracle(machine: StateMachine, messages: Sequence[Any]) -> set[str]:
    """Distinct final-state digests over every ordering of ``messages``."""
    if len(messages) > MAX_ORACLE_MESSAGES:
        raise ValueError(
            f"{len(messages)} messages means {len(messages)}! orderings; "
            f"use at most {MAX_ORACLE_MESSAGES} (test a smaller sub-multiset)"
        )
    finals = set()
    for order in set(itertools.permutations(messages)):
        finals.add(machine.digest(machine.run(order)))
    return finals


# --- availability -----------------------------------------------------------

def summarize(values: Sequence[float]) -> dict[str, Any]:
    if not len(values):
        return {"n": 0}
    arr = np.asarray(values, dtype=np.float64)
    p50, p90, p99 = np.percentile(arr, [50, 90, 99])
    return {"n": int(arr.size), "min": int(arr.min()), "p50": float(p50), "p90": float(p90),
            "p99": float(p99), "max": int(arr.max())}


def _split(ref: str) -> tuple[str, str]:
    fed, _, port = ref.partition(".")
    return fed, port


def availability_report(traces: Traces, pairs: Sequence[dict[str, Any]],
                        staleness_key: Optional[str] = None) -> dict[str, Any]:
    """Response latency per request/response pair, staleness and absence detection.

    A pair names a request trigger ``"fed.trigger"`` and optionally a
    response output ``"fed.port"``.  Without a response port the reaction
    invocation itself is the response.  Latency is the local invocation
    or send time minus the request tag time.  ``expected`` in a pair is the
    number of requests that should have been served; shortfalls count as
    unavailable.
    """
    traces = _as_list(traces)
    out: dict[str, Any] = {"pairs": [], "unavailable": 0}
    all_lat: list[int] = []
    for pair in pairs:
        fed, trigger = _split(pair["request"])
        evs = [e for tr in traces for e in tr.of(fed)]
        reqs = [e for e in evs if e.kind == "reaction" and trigger in e.detail.get("inputs", {})
                and e.detail.get("mode") == "normal"]
        lat = []
        unmatched = 0
        if pair.get("response"):
            rfed, rport = _split(pair["response"])
            sends = {}
            for tr in traces:
                for e in tr.of(rfed, "send"):
                    if e.port == rport:
                        sends.setdefault(str(e.tag), e.local_time)
            for e in reqs:
                t = sends.get(str(e.tag))
                if t is None:
                    unmatched += 1
                else:
                    lat.append(t - e.tag.time)
        else:
            lat = [e.local_time - e.tag.time for e in reqs]
        if "expected" in pair:
            unmatched += max(0, int(pair["expected"]) - len(reqs))
        out["pairs"].append({"request": pair["request"], "response": pair.get("response"),
                             "latency": summarize(lat), "unavailable": unmatched})
        out["unavailable"] += unmatched
        all_lat.extend(lat)
    out["latency"] = summarize(all_lat)
    if staleness_key:
        stale = []
        for pair in pairs:
            fed, _ = _split(pair["request"])
            for tr in traces:
                for e in tr.of(fed, "reaction"):
                    notes = e.detail.get("notes", {})
                    if staleness_key in notes:
                        stale.append(e.tag.time - int(notes[staleness_key]))
        out["staleness"] = summarize(stale)
    out["absence_detection"] = absence_detection(traces)
    return out


def absence_detection(traces: Traces) -> dict[str, Any]:
    """Delay from tag time to the local time a missing input was noticed.

    Counts ``absent_assumed`` events and reactions that noted a ``fault``.
    """
    lat: list[int] = []
    rows = []
    for tr in _as_list(traces):
        for e in tr.events:
            if e.kind == "absent_assumed" or (e.kind == "reaction" and e.detail.get("notes", {}).get("fault")):
                lat.append(e.local_time - e.tag.time)
                rows.append({"federate": e.federate, "tag": str(e.tag), "local": e.local_time,
                             "latency": e.local_time - e.tag.time,
                             "what": e.port or e.detail.get("notes", {}).get("fault")})
    return {"latency": summarize(lat), "events": rows}


# --- accounting -------------------------------------------------------------

def message_accounting(trace: Trace) -> dict[str, Any]:
    """Recount messages from trace events and check the conservation laws."""
    sends = trace.kind("send")
    delivered = trace.kind("deliver")
    partitioned = sum(1 for e in sends if e.detail.get("partitioned"))
    normal = sum(1 for e in delivered if e.detail.get("class") == "normal")
    tardy = sum(1 for e in delivered if e.detail.get("class") == "tardy")
    acc = {"sent": len(sends), "delivered": len(delivered), "partitioned": partitioned,
           "normal": normal, "tardy": tardy}
    acc["balanced"] = (acc["sent"] == acc["delivered"] + partitioned
                       and acc["delivered"] == normal + tardy)
    return acc


def check_fifo(trace: Trace) -> list[str]:
    """Ports whose delivery order differs from the send order of their channel."""
    sent: dict[str, list[str]] = {}
    for e in trace.kind("send"):
        if not e.detail.get("partitioned"):
            sent.setdefault(e.detail["dest"], []).append(e.detail["dest_tag"])
    got: dict[str, list[str]] = {}
    for e in trace.kind("deliver"):
        got.setdefault(f"{e.federate}.{e.port}", []).append(str(e.tag))
    bad = []
    for port in sorted(set(sent) | set(got)):
        s, g = sent.get(port, []), got.get(port, [])
        if g != s[:len(g)] or [parse_tag(x) for x in g] != sorted(parse_tag(x) for x in g):
            bad.append(port)
    return bad


def check_replicas(traces: Sequence[Trace], fed: str) -> Verdict:
    """Logical-time consistency of one federate across independent runs.

    Each trace is treated as a replica of ``fed``; runs of the same
    federation under different seeds or channel models must agree when
    the federate coordinates conservatively.
    """
    name = "replica_consistency"
    group = [f"{fed}#{i}" for i in range(len(traces))]
    sigs = []
    for tr in traces:
        if fed not in tr.meta.get("federates", {}):
            return Verdict(name, INCONCLUSIVE, group, f"trace {tr.source} has no federate {fed}")
        if tr.truncated:
            return Verdict(name, INCONCLUSIVE, group, f"trace {tr.source} is truncated (no end record)")
        sigs.append(reaction_signature(tr.of(fed)))
    for i, sig in enumerate(sigs[1:], start=1):
        for k in range(max(len(sig), len(sigs[0]))):
            a = sigs[0][k] if k < len(sigs[0]) else None
            b = sig[k] if k < len(sig) else None
            if a != b:
                tag = (a or b)[0]
                return Verdict(name, FAIL, group, f"run 0 and run {i} diverge at tag {tag}",
                               {"index": k, "tag": tag, "run0": _sig_dict(a), f"run{i}": _sig_dict(b)})
    return Verdict(name, PASS, group)


def check_trace(trace: Trace, groups: Optional[Sequence[Sequence[str]]] = None,
                checks: Sequence[str] = ("logical", "eventual")) -> dict[str, Any]:
    """Report used by the ``check`` command."""
    if groups is None:
        groups = trace.meta.get("groups", [])
    verdicts = []
    for g in groups:
        if "logical" in checks:
            v = check_logical_time_consistency(trace, g)
            if trace.truncated and v.verdict == PASS:
                v = Verdict(v.check, INCONCLUSIVE, v.group, "trace is truncated (no end record)")
            verdicts.append(v)
        if "eventual" in checks:
            verdicts.append(check_eventual_consistency(trace, g))
    acc = message_accounting(trace)
    counts = dict(acc)
    counts["stp_violations"] = acc["tardy"]
    counts["deadline_violations"] = len(trace.kind("deadline_violation"))
    counts["absent_assumed"] = len(trace.kind("absent_assumed"))
    report = {
        "source": trace.source,
        "truncated": trace.truncated,
        "verdicts": [v.to_dict() for v in verdicts],
        "counts": counts,
        "fifo_violations": check_fifo(trace),
    }
    if trace.truncated:
        why = "missing end record; the run did not finish writing"
        if trace.partial_line is not None:
            why += f" (line {trace.partial_line} is cut off)"
        report["diagnostic"] = why
        verdicts.append(Verdict("completeness", INCONCLUSIVE, [], why))
        report["verdicts"].append(verdicts[-1].to_dict())
    avail = trace.meta.get("availability")
    if avail:
        report["availability"] = availability_report(trace, avail.get("pairs", []),
                                                     avail.get("staleness_key"))
    return report
