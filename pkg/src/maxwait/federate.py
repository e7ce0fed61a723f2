"""The federate engine.

A :class:`Federate` is a passive state machine.  A driver (the virtual-time
coordinator or the real-time runner) hands it deliveries with
:meth:`Federate.receive` and calls :meth:`Federate.step` whenever
something may have changed; the federate answers through its
:class:`Host` by emitting messages, asking to be woken at a reference time
and recording trace events.

Advancing the current tag to the tag ``t`` of the earliest pending event
is allowed when every input port is known up to and including ``t``, or
when the local clock has passed ``t.time + maxwait``.
"""

from __future__ import annotations

import copy
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Protocol

from .model import Context, FederateSpec, ReactionSpec, TimerSpec, lookup_body
from .netsim import TransportFault
from .tags import FOREVER, MAX_TAG, MIN_TAG, Duration, Tag, format_duration, format_tag
from .timebase import ClockModel
from .trace import digest

log = logging.getLogger(__name__)


def can_advance(last_known: Iterable[Tag], t: Tag, maxwait: Duration, local_now: int) -> bool:
    """True iff every port is known at ``t`` or the maxwait timeout has expired."""
    if all(lk >= t for lk in last_known):
        return True
    return maxwait != FOREVER and local_now >= t.time + maxwait


def resolve_absent(last_known: Tag, has_message: bool, t: Tag, absent_after: Duration, local_now: int) -> bool:
    """True iff a port still unknown at ``t`` is to be assumed absent now."""
    if has_message or last_known >= t:
        return False
    return absent_after != FOREVER and local_now >= t.time + absent_after


def check_deadline(deadline: int, trigger_tag: Tag, invocation_time: int) -> bool:
    """True iff invoking at ``invocation_time`` violates ``deadline``."""
    return invocation_time - trigger_tag.time > deadline


def fire_timer(timer: TimerSpec, k: int) -> Tag:
    if k < 0:
        raise ValueError("firing index must be non-negative")
    if timer.period is None:
        if k > 0:
            raise ValueError(f"timer {timer.name} fires only once")
        return Tag(timer.offset, 0)
    return Tag(timer.offset + k * timer.period, 0)


class Host(Protocol):
    def emit(self, fed: str, port: str, tag: Tag, value: Any, ref_now: int) -> None: ...

    def close_outputs(self, fed: str, ref_now: int) -> None: ...

    def request_wakeup(self, fed: str, ref_time: int) -> None: ...

    def record(self, fed: str, kind: str, ref_now: int, local: int, tag: Optional[Tag] = None,
               port: Optional[str] = None, detail: Optional[dict] = None,
               state: Optional[str] = None) -> None: ...


@dataclass
class Message:
    tag: Tag
    value: Any
    src_tag: Optional[Tag] = None


@dataclass
class PortState:
    name: str
    absent_after: Duration = 0
    last_known: Tag = MIN_TAG
    pending: deque = field(default_factory=deque)
    assumed_absent_at: Optional[Tag] = None
    closed: bool = False

    @property
    def gated(self) -> bool:
        return self.absent_after != 0


@dataclass
class TardyMessage:
    port: str
    message: Message


@dataclass
class TagRun:
    """Progress through the reactions of the tag being processed."""

    tag: Tag
    inputs: dict[str, Any]
    via: str
    shutdown: bool = False
    next_idx: int = 0
    tardy_jobs: deque = field(default_factory=deque)
    resolved_absent: set = field(default_factory=set)


@dataclass
class FederateStats:
    normal: int = 0
    tardy: int = 0
    dropped: int = 0
    deadline_violations: int = 0
    faults: int = 0
    absent_assumed: int = 0
    advances: int = 0
    reactions: int = 0
    post_shutdown_outputs: int = 0

    def as_dict(self) -> dict[str, int]:
        return dict(self.__dict__)


class Federate:
    def __init__(
        self,
        spec: FederateSpec,
        host: Host,
        clock: ClockModel,
        stop_tag: Tag,
        absent_after: Optional[dict[str, Duration]] = None,
        connected: Optional[Iterable[str]] = None,
    ):
        self.spec = spec
        self.id = spec.id
        self.host = host
        self.clock = clock
        self.stop_tag = stop_tag
        self.reactions: list[ReactionSpec] = list(spec.reactions)
        self.maxwait: Duration = spec.maxwait
        self._next_maxwait: Optional[Duration] = None
        self.state: dict[str, Any] = copy.deepcopy(spec.state)
        self.current: Tag = MIN_TAG
        self.finished = False
        self.run: Optional[TagRun] = None
        self.tardy_queue: deque[TardyMessage] = deque()
        self.busy_until: Optional[int] = None
        self._outbox: list[tuple[str, Any, Tag]] = []
        self.stats = FederateStats()
        absent_after = absent_after or {}
        connected = set(spec.inputs if connected is None else connected)
        self.ports: dict[str, PortState] = {}
        for name in spec.inputs:
            ps = PortState(name, absent_after.get(name, 0))
            if name not in connected:
                # nothing can ever arrive on an unconnected input
                ps.last_known, ps.closed = MAX_TAG, True
            self.ports[name] = ps
        self._timer_k = {t.name: 0 for t in spec.timers}
        self._action_i = {a.name: 0 for a in spec.actions}
        self._dependents = {
            p: [i for i, r in enumerate(self.reactions) if p in r.depends_on] for p in spec.inputs
        }

    # -- queries ------------------------------------------------------------

    def last_known(self) -> dict[str, Tag]:
        return {p: ps.last_known for p, ps in self.ports.items()}

    def _timer_tag(self, timer: TimerSpec) -> Optional[Tag]:
        k = self._timer_k[timer.name]
        if timer.period is None and k > 0:
            return None
        return fire_timer(timer, k)

    def next_event_tag(self) -> Optional[Tag]:
        """Tag of the earliest pending event not beyond the stop tag."""
        candidates = [ps.pending[0].tag for ps in self.ports.values() if ps.pending]
        for timer in self.spec.timers:
            tag = self._timer_tag(timer)
            if tag is not None:
                candidates.append(tag)
        for action in self.spec.actions:
            i = self._action_i[action.name]
            if i < len(action.events):
                candidates.append(Tag(action.events[i][0], 0))
        if not self.finished:
            candidates.append(self.stop_tag)
        candidates = [c for c in candidates if self.current < c <= self.stop_tag]
        return min(candidates) if candidates else None

    def can_advance(self, t: Tag, local_now: int) -> bool:
        return can_advance((ps.last_known for ps in self.ports.values()), t, self.maxwait, local_now)

    def blocked_reason(self) -> Optional[dict[str, Any]]:
        """Why this federate has not finished, for stall reports."""
        if self.finished and not self.tardy_queue and self.run is None:
            return None
        if self.run is not None:
            tag = self.run.tag
            unresolved = [p for p, ps in self.ports.items()
                          if ps.gated and p not in self.run.inputs
                          and p not in self.run.resolved_absent and ps.last_known < tag]
            return {"tag": format_tag(tag), "unresolved_ports": unresolved, "phase": "in_tag"}
        t = self.next_event_tag()
        if t is None:
            return None
        unknown = [p for p, ps in self.ports.items() if ps.last_known < t]
        return {"tag": format_tag(t), "unknown_ports": unknown, "phase": "advance",
                "maxwait": format_duration(self.maxwait)}

    # -- inputs -------------------------------------------------------------

    def _can_join(self, port: str) -> bool:
        run = self.run
        if run is None or port in run.inputs or run.tardy_jobs:
            return False
        return all(i >= run.next_idx for i in self._dependents.get(port, ()))

    def receive(self, port: str, message: Message, ref_now: int) -> str:
        """Accept a delivered message and classify it as ``normal`` or ``tardy``."""
        local = self.clock.local_time(ref_now)
        ps = self.ports[port]
        tag = message.tag
        if tag < ps.last_known:
            raise TransportFault(
                f"{self.id}.{port}: tag {format_tag(tag)} after {format_tag(ps.last_known)} (in-order delivery violated)"
            )
        ps.last_known = max(ps.last_known, tag)
        detail: dict[str, Any] = {"value": digest(message.value)}
        if message.src_tag is not None:
            detail["src_tag"] = format_tag(message.src_tag)
        if tag > self.current:
            ps.pending.append(message)
            cls = "normal"
        elif tag == self.current and self._can_join(port):
            self.run.inputs[port] = message.value
            cls = "normal"
            detail["joined"] = True
        else:
            cls = "tardy"
        detail["class"] = cls
        self.host.record(self.id, "deliver", ref_now, local, tag, port, detail)
        if cls == "normal":
            self.stats.normal += 1
        else:
            self.stats.tardy += 1
            self.tardy_queue.append(TardyMessage(port, message))
            handling = [[self.reactions[i].name, self.reactions[i].tardy]
                        for i in self._dependents.get(port, ())]
            self.host.record(self.id, "tardy", ref_now, local, tag, port,
                             {"current": format_tag(self.current), "handling": handling})
        return cls

    def receive_close(self, port: str, ref_now: int) -> None:
        ps = self.ports[port]
        ps.last_known = MAX_TAG
        ps.closed = True
        self.host.record(self.id, "close", ref_now, self.clock.local_time(ref_now), None, port)

    # -- stepping -----------------------------------------------------------

    def step(self, ref_now: int) -> None:
        """Make all progress possible at reference time ``ref_now``."""
        if self.busy_until is not None:
            if ref_now < self.busy_until:
                return
            self.busy_until = None
            self._flush_outbox(ref_now)
        local = self.clock.local_time(ref_now)
        while True:
            if self.run is not None:
                if not self._continue(ref_now, local):
                    return
                self._complete_tag(ref_now)
                continue
            if self.tardy_queue:
                self._begin_tardy_tag(ref_now, local)
                continue
            t = self.next_event_tag()
            if t is None:
                return
            if local < t.time:
                # logical time never runs ahead of the local clock
                self.host.request_wakeup(self.id, self.clock.reference_time_for(t.time))
                return
            if self.can_advance(t, local):
                self._begin_tag(t, ref_now, local)
                continue
            if self.maxwait != FOREVER:
                self.host.request_wakeup(self.id, self.clock.reference_time_for(t.time + self.maxwait))
            return

    def _collect_inputs(self, t: Tag) -> dict[str, Any]:
        inputs: dict[str, Any] = {}
        for name, ps in self.ports.items():
            if ps.pending and ps.pending[0].tag == t:
                inputs[name] = ps.pending.popleft().value
        for timer in self.spec.timers:
            if self._timer_tag(timer) == t:
                inputs[timer.name] = True
                self._timer_k[timer.name] += 1
        for action in self.spec.actions:
            i = self._action_i[action.name]
            if i < len(action.events) and Tag(action.events[i][0], 0) == t:
                inputs[action.name] = action.events[i][1]
                self._action_i[action.name] += 1
        return inputs

    def _begin_tag(self, t: Tag, ref_now: int, local: int) -> None:
        known = all(ps.last_known >= t for ps in self.ports.values())
        self.current = t
        inputs = self._collect_inputs(t)
        unknown = [p for p, ps in self.ports.items() if p not in inputs and ps.last_known < t]
        self.run = TagRun(t, inputs, "known" if known else "maxwait",
                          shutdown=(t == self.stop_tag and not self.finished))
        self.stats.advances += 1
        detail: dict[str, Any] = {"via": self.run.via, "maxwait": format_duration(self.maxwait)}
        if unknown:
            detail["assumed_absent"] = [p for p in unknown if not self.ports[p].gated]
            gated = [p for p in unknown if self.ports[p].gated]
            if gated:
                detail["gated"] = gated
        self.host.record(self.id, "advance", ref_now, local, t, None, detail)

    def _begin_tardy_tag(self, ref_now: int, local: int) -> None:
        t = Tag(self.current.time, self.current.microstep + 1)
        self.current = t
        inputs = self._collect_inputs(t)
        self.run = TagRun(t, inputs, "tardy")
        # a reaction runs at most once per tag, so surplus tardy messages
        # wait for the next microstep (per-port order is kept)
        used: set[int] = set()
        deferred: deque[TardyMessage] = deque()
        while self.tardy_queue:
            tm = self.tardy_queue.popleft()
            handlers = [i for i in self._dependents.get(tm.port, ()) if self.reactions[i].tardy != "none"]
            if not handlers:
                self.stats.dropped += 1
            elif deferred or used.intersection(handlers):
                deferred.append(tm)
            else:
                used.update(handlers)
                self.run.tardy_jobs.extend((i, tm) for i in handlers)
        self.tardy_queue = deferred
        self.stats.advances += 1
        self.host.record(self.id, "advance", ref_now, local, t, None,
                         {"via": "tardy", "maxwait": format_duration(self.maxwait)})

    def _continue(self, ref_now: int, local: int) -> bool:
        """Run reactions of the current tag; False if blocked or busy."""
        run = self.run
        while run.tardy_jobs:
            i, tm = run.tardy_jobs.popleft()
            rx = self.reactions[i]
            body = rx.tardy_handler if rx.tardy == "handler" else rx.body
            self._invoke(rx, body, {tm.port: tm.message.value}, ref_now, local,
                         mode="tardy", intended=tm.message.tag)
            if self.busy_until is not None:
                return False
        while run.next_idx < len(self.reactions):
            rx = self.reactions[run.next_idx]
            for p in rx.depends_on:
                ps = self.ports.get(p)
                if ps is None or not ps.gated or p in run.inputs or p in run.resolved_absent:
                    continue
                if ps.last_known >= run.tag:
                    continue
                if resolve_absent(ps.last_known, False, run.tag, ps.absent_after, local):
                    run.resolved_absent.add(p)
                    ps.assumed_absent_at = run.tag
                    self.stats.absent_assumed += 1
                    self.host.record(self.id, "absent_assumed", ref_now, local, run.tag, p,
                                     {"absent_after": format_duration(ps.absent_after)})
                    continue
                if ps.absent_after != FOREVER:
                    self.host.request_wakeup(
                        self.id, self.clock.reference_time_for(run.tag.time + ps.absent_after))
                return False
            run.next_idx += 1
            if not any(trig in run.inputs for trig in rx.triggers):
                continue
            inputs = {n: run.inputs[n] for n in rx.depends_on if n in run.inputs}
            self._invoke(rx, rx.body, inputs, ref_now, local)
            if self.busy_until is not None:
                return False
        return True

    def _complete_tag(self, ref_now: int) -> None:
        if self._next_maxwait is not None:
            self.maxwait, self._next_maxwait = self._next_maxwait, None
        if self.run.shutdown:
            self.finished = True
            self.host.close_outputs(self.id, ref_now)
        self.run = None

    def _invoke(self, rx: ReactionSpec, body_ref: Any, inputs: dict[str, Any], ref_now: int,
                local: int, mode: str = "normal", intended: Optional[Tag] = None) -> None:
        tag = self.current
        if mode == "normal" and rx.deadline is not None and check_deadline(rx.deadline, tag, local):
            mode = "deadline"
            body_ref = rx.deadline_handler
            self.stats.deadline_violations += 1
            self.host.record(self.id, "deadline_violation", ref_now, local, tag, None,
                             {"reaction": rx.name, "lag": local - tag.time,
                              "deadline": format_duration(rx.deadline)})
        ctx = Context(self.id, rx.name, tag, local, copy.deepcopy(self.state), inputs,
                      rx.effects, rx.params, intended_tag=intended)
        try:
            lookup_body(body_ref)(ctx)
        except Exception as exc:  # body failure is a federate fault, not a run failure
            self.stats.faults += 1
            log.debug("reaction %s.%s failed", self.id, rx.name, exc_info=True)
            self.host.record(self.id, "fault", ref_now, local, tag, None,
                             {"reaction": rx.name, "error": f"{type(exc).__name__}: {exc}"})
            return
        self.state = ctx.state
        self.stats.reactions += 1
        if ctx.new_maxwait is not None:
            self._next_maxwait = ctx.new_maxwait
        detail: dict[str, Any] = {
            "reaction": rx.name,
            "mode": mode,
            "inputs": {k: digest(v) for k, v in sorted(inputs.items())},
        }
        if intended is not None:
            detail["intended"] = format_tag(intended)
        if ctx.notes:
            detail["notes"] = ctx.notes
        if ctx.new_maxwait is not None:
            detail["set_maxwait"] = format_duration(ctx.new_maxwait)
        if ctx.outputs:
            detail["outputs"] = sorted(ctx.outputs)
        spent = rx.compute_time + ctx.spent
        if spent:
            detail["spent"] = spent
        self.host.record(self.id, "reaction", ref_now, local, tag, None, detail, digest(self.state))
        outputs = [(p, ctx.outputs[p], tag) for p in rx.effects if p in ctx.outputs]
        if spent:
            self._outbox.extend(outputs)
            self.busy_until = ref_now + spent
            self.host.request_wakeup(self.id, self.busy_until)
        else:
            self._send(outputs, ref_now)

    def _flush_outbox(self, ref_now: int) -> None:
        outputs, self._outbox = self._outbox, []
        self._send(outputs, ref_now)

    def _send(self, outputs: list[tuple[str, Any, Tag]], ref_now: int) -> None:
        for port, value, tag in outputs:
            if self.finished:
                self.stats.post_shutdown_outputs += 1
                continue
            self.host.emit(self.id, port, tag, value, ref_now)
