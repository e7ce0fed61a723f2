"""Virtual-time execution of a federation.

:func:`run_federation` drives every federate from one agenda on a hidden
reference timeline.  Each instant is handled in two phases: first all
deliveries due at that instant are handed to their federates, then every
touched federate is stepped in federate-id order.  Nothing depends on
hash order or wall-clock time, so a spec and a seed fix the trace byte for
byte.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .federate import Federate, Message
from .model import ConnectionSpec, FederationSpec
from .netsim import Channel, ChannelOrderError, InFlightMessage, TransportFault
from .tags import FOREVER, Tag, add_delay, format_duration, format_tag
from .timebase import ClockModel, VirtualTimeline
from .trace import DIGEST_ALGORITHM, Trace, TraceEvent, digest

log = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_STALL = "stall"
STATUS_TRANSPORT_FAULT = "transport_fault"
STATUS_SCENARIO_ERROR = "scenario_error"


class RunawayError(RuntimeError):
    """The run exceeded its step budget without reaching quiescence."""


@dataclass
class RunResult:
    trace: Trace
    status: str
    stalls: list[dict[str, Any]] = field(default_factory=list)
    fault: Optional[str] = None
    counts: dict[str, int] = field(default_factory=dict)
    federates: dict[str, dict[str, int]] = field(default_factory=dict)
    final_time: int = 0

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


def federation_meta(spec: FederationSpec, seed: int) -> dict[str, Any]:
    feds = {}
    for f in spec.federates:
        feds[f.id] = {
            "maxwait": format_duration(f.maxwait),
            "inputs": list(f.inputs),
            "outputs": list(f.outputs),
            "initial_state": digest(f.state),
        }
    return {
        "federation": spec.name,
        "seed": seed,
        "duration": spec.duration,
        "digest": DIGEST_ALGORITHM,
        "federates": feds,
        "connections": [c.id for c in spec.connections],
        **{k: v for k, v in spec.metadata.items()},
    }


class VirtualRun:
    """One run of a federation on the virtual timeline."""

    def __init__(self, spec: FederationSpec, seed: Optional[int] = None, max_steps: int = 5_000_000):
        spec.validate()
        self.spec = spec
        self.seed = spec.seed if seed is None else seed
        self.max_steps = max_steps
        self.timeline = VirtualTimeline()
        self.stop_tag = Tag(spec.duration, 0)
        self.events: list[TraceEvent] = []
        self._wakeups: set[tuple[str, int]] = set()
        self.routes: dict[tuple[str, str], list[ConnectionSpec]] = {}
        self.channels: dict[str, Channel] = {}
        absent: dict[str, dict[str, Any]] = {f.id: {} for f in spec.federates}
        connected: dict[str, list[str]] = {f.id: [] for f in spec.federates}
        for c in spec.connections:
            self.routes.setdefault((c.source_federate, c.source_port), []).append(c)
            self.channels[c.id] = Channel(c.id, spec.channel_model(c.id), self.seed)
            absent[c.dest_federate][c.dest_port] = c.absent_after
            connected[c.dest_federate].append(c.dest_port)
        self.federates: dict[str, Federate] = {}
        for f in sorted(spec.federates, key=lambda f: f.id):
            clock = spec.clocks.get(f.id, ClockModel())
            self.federates[f.id] = Federate(f, self, clock, self.stop_tag, absent[f.id], connected[f.id])

    # -- Host protocol --------------------------------------------------------

    def record(self, fed: str, kind: str, ref_now: int, local: int, tag: Optional[Tag] = None,
               port: Optional[str] = None, detail: Optional[dict] = None,
               state: Optional[str] = None) -> None:
        self.events.append(TraceEvent(len(self.events), ref_now, local, fed, kind, tag, port,
                                      state, detail or {}))

    def request_wakeup(self, fed: str, ref_time: Any) -> None:
        if ref_time == FOREVER:
            return
        ref_time = max(int(ref_time), self.timeline.now)
        key = (fed, ref_time)
        if key not in self._wakeups:
            self._wakeups.add(key)
            self.timeline.schedule(ref_time, fed, "wake")

    def emit(self, fed: str, port: str, tag: Tag, value: Any, ref_now: int) -> None:
        local = self.federates[fed].clock.local_time(ref_now)
        for conn in self.routes.get((fed, port), ()):
            dest_tag = tag if conn.after is None else add_delay(tag, conn.after)
            msg = self.channels[conn.id].send(dest_tag, value, ref_now, src_tag=tag)
            detail = {"channel": conn.id, "dest": conn.dest, "dest_tag": format_tag(dest_tag),
                      "value": digest(value)}
            if msg is None:
                detail["partitioned"] = True
            else:
                detail["deliver_at"] = msg.deliver_at
                self.timeline.schedule(msg.deliver_at, conn.dest_federate, "deliver", (conn, msg))
            self.record(fed, "send", ref_now, local, tag, port, detail)

    def close_outputs(self, fed: str, ref_now: int) -> None:
        for port in self.federates[fed].spec.outputs:
            for conn in self.routes.get((fed, port), ()):
                msg = self.channels[conn.id].send_control("close", ref_now)
                if msg is not None:
                    self.timeline.schedule(msg.deliver_at, conn.dest_federate, "deliver", (conn, msg))

    # -- driving -------------------------------------------------------------

    def _deliver(self, conn: ConnectionSpec, msg: InFlightMessage, now: int) -> None:
        fed = self.federates[conn.dest_federate]
        if msg.control:
            fed.receive_close(conn.dest_port, now)
        else:
            fed.receive(conn.dest_port, Message(msg.tag, msg.payload, msg.src_tag), now)

    def run(self) -> RunResult:
        for fid in self.federates:
            self.request_wakeup(fid, 0)
        status, fault = STATUS_OK, None
        steps = 0
        try:
            while True:
                nxt = self.timeline.advance_to_next_wakeup()
                if nxt is None:
                    break
                now, due = nxt
                touched: set[str] = set()
                for w in due:
                    if w.purpose == "deliver":
                        self._deliver(*w.payload, now)
                    else:
                        self._wakeups.discard((w.federate, w.time))
                    touched.add(w.federate)
                for fid in sorted(touched):
                    self.federates[fid].step(now)
                steps += 1
                if steps > self.max_steps:
                    raise RunawayError(f"no quiescence after {self.max_steps} agenda steps")
        except TransportFault as exc:
            status, fault = STATUS_TRANSPORT_FAULT, str(exc)
        except ChannelOrderError as exc:
            status, fault = STATUS_SCENARIO_ERROR, str(exc)
        now = self.timeline.now
        stalls = []
        if status == STATUS_OK:
            for fid, fed in self.federates.items():
                reason = fed.blocked_reason()
                if reason is not None:
                    stalls.append({"federate": fid, **reason})
                    self.record(fid, "stall", now, fed.clock.local_time(now),
                                fed.run.tag if fed.run else None, None, reason)
            if stalls:
                status = STATUS_STALL
        counts = self.counts()
        fed_stats = {fid: fed.stats.as_dict() for fid, fed in self.federates.items()}
        end = {
            "status": status,
            "reference_time": now,
            "counts": counts,
            "federates": {fid: {**fed_stats[fid], "final_state": digest(fed.state),
                                "finished": fed.finished}
                          for fid, fed in self.federates.items()},
        }
        if fault:
            end["fault"] = fault
        if stalls:
            end["stalls"] = stalls
        trace = Trace(federation_meta(self.spec, self.seed), self.events, end)
        return RunResult(trace, status, stalls, fault, counts, fed_stats, now)

    def counts(self) -> dict[str, int]:
        return tally(self.channels.values(), self.events, self.federates.values())


def tally(channels: Iterable[Channel], events: Iterable[TraceEvent], federates: Iterable[Federate]) -> dict[str, int]:
    """Message and classification counters for the end record."""
    channels, feds = list(channels), list(federates)
    sent = sum(ch.sent for ch in channels)
    partitioned = sum(ch.lost for ch in channels)
    delivered = sum(1 for e in events if e.kind == "deliver")
    return {
        "sent": sent,
        "delivered": delivered,
        "partitioned": partitioned,
        "in_flight": sent - partitioned - delivered,
        "normal": sum(f.stats.normal for f in feds),
        "tardy": sum(f.stats.tardy for f in feds),
        "dropped_tardy": sum(f.stats.dropped for f in feds),
        "deadline_violations": sum(f.stats.deadline_violations for f in feds),
        "absent_assumed": sum(f.stats.absent_assumed for f in feds),
        "faults": sum(f.stats.faults for f in feds),
    }


def run_federation(spec: FederationSpec, seed: Optional[int] = None, **kwargs: Any) -> RunResult:
    """Run ``spec`` to quiescence on the virtual timeline."""
    return VirtualRun(spec, seed, **kwargs).run()
