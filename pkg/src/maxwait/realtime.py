"""Real-time execution: one thread per federate, sockets between them.

Every connection is a connected socket pair carrying length-prefixed
frames.  The sending thread samples the channel model and stamps each
frame with its due time; a reader thread per connection holds the frame
until that time on the shared host clock and then hands it to the
destination federate's inbox.  Federate state is touched only by its own
thread.

Physical time is the host's monotonic clock, optionally sped up by
``speed`` so that a 10 s federation can finish in about one second.
Traces from this mode are not reproducible; use the virtual mode for
that.
"""

from __future__ import annotations

import heapq
import json
import logging
import queue
import socket
import threading
import time
from typing import Any, Optional

from .federate import Federate, Message
from .model import ConnectionSpec, FederationSpec
from .netsim import CLOSE_PORT, Channel, ChannelOrderError, TransportFault, recv_frame, send_frame
from .runtime import (
    STATUS_OK, STATUS_SCENARIO_ERROR, STATUS_STALL, STATUS_TRANSPORT_FAULT, RunResult, federation_meta, tally,
)
from .tags import FOREVER, Tag, add_delay, format_tag
from .timebase import ClockModel
from .trace import Trace, TraceEvent, canonical_json, digest

log = logging.getLogger(__name__)


class ScaledClock:
    """Reference time in ns since start, running ``speed`` times faster than the host."""

    def __init__(self, speed: float = 1.0):
        if speed <= 0:
            raise ValueError("speed must be positive")
        self.speed = speed
        self.start = time.monotonic_ns()

    def now(self) -> int:
        return int((time.monotonic_ns() - self.start) * self.speed)

    def seconds_until(self, ref_time: int) -> float:
        return max(0.0, (ref_time - self.now()) / self.speed / 1e9)


class _Link:
    """Socket pair for one connection plus its reader thread."""

    def __init__(self, run: "RealtimeRun", conn: ConnectionSpec, port_id: int):
        self.run = run
        self.conn = conn
        self.port_id = port_id
        self.tx, self.rx = socket.socketpair()
        self.thread = threading.Thread(target=self._read, name=f"link {conn.id}", daemon=True)

    def send(self, tag: Tag, envelope: dict[str, Any]) -> None:
        send_frame(self.tx, tag, self.port_id, canonical_json(envelope).encode())

    def close(self) -> None:
        for s in (self.tx, self.rx):
            try:
                s.close()
            except OSError:
                pass

    def _read(self) -> None:
        clock = self.run.clock
        inbox = self.run.inboxes[self.conn.dest_federate]
        try:
            while True:
                frame = recv_frame(self.rx)
                if frame is None:
                    return
                tag, port_id, payload = frame
                env = json.loads(payload)
                delay = clock.seconds_until(env["at"])
                if delay:
                    time.sleep(delay)
                if port_id == CLOSE_PORT:
                    inbox.put(("close", self.conn.dest_port, None))
                else:
                    src = env.get("src")
                    msg = Message(tag, env["v"], Tag.parse(src) if src else None)
                    inbox.put(("deliver", self.conn.dest_port, msg))
        except (OSError, TransportFault, ValueError) as exc:
            if not self.run.stopping.is_set():
                self.run.fail(STATUS_TRANSPORT_FAULT, f"{self.conn.id}: {exc}")


class RealtimeRun:
    """Run a federation against the host clock."""

    def __init__(self, spec: FederationSpec, seed: Optional[int] = None, speed: float = 1.0,
                 grace: float = 1.0):
        spec.validate()
        self.spec = spec
        self.seed = spec.seed if seed is None else seed
        self.stop_tag = Tag(spec.duration, 0)
        self.grace = grace
        self.clock = ScaledClock(speed)
        self.stopping = threading.Event()
        self._lock = threading.Lock()
        self.events: list[TraceEvent] = []
        self.status, self.fault = STATUS_OK, None
        self.inboxes: dict[str, queue.Queue] = {f.id: queue.Queue() for f in spec.federates}
        self._wakeups: dict[str, list[int]] = {f.id: [] for f in spec.federates}
        self.routes: dict[tuple[str, str], list[ConnectionSpec]] = {}
        self.channels: dict[str, Channel] = {}
        self.links: dict[str, _Link] = {}
        absent: dict[str, dict[str, Any]] = {f.id: {} for f in spec.federates}
        connected: dict[str, list[str]] = {f.id: [] for f in spec.federates}
        for i, c in enumerate(spec.connections):
            self.routes.setdefault((c.source_federate, c.source_port), []).append(c)
            self.channels[c.id] = Channel(c.id, spec.channel_model(c.id), self.seed)
            self.links[c.id] = _Link(self, c, i)
            absent[c.dest_federate][c.dest_port] = c.absent_after
            connected[c.dest_federate].append(c.dest_port)
        self.federates = {
            f.id: Federate(f, self, spec.clocks.get(f.id, ClockModel()), self.stop_tag,
                           absent[f.id], connected[f.id])
            for f in sorted(spec.federates, key=lambda f: f.id)
        }

    # -- Host protocol (called from the owning federate's thread) ------------

    def record(self, fed: str, kind: str, ref_now: int, local: int, tag: Optional[Tag] = None,
               port: Optional[str] = None, detail: Optional[dict] = None,
               state: Optional[str] = None) -> None:
        with self._lock:
            self.events.append(TraceEvent(len(self.events), ref_now, local, fed, kind, tag, port,
                                          state, detail or {}))

    def request_wakeup(self, fed: str, ref_time: Any) -> None:
        if ref_time != FOREVER:
            heapq.heappush(self._wakeups[fed], int(ref_time))

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
                self.links[conn.id].send(dest_tag, {"v": value, "at": msg.deliver_at, "src": format_tag(tag)})
            self.record(fed, "send", ref_now, local, tag, port, detail)

    def close_outputs(self, fed: str, ref_now: int) -> None:
        for port in self.federates[fed].spec.outputs:
            for conn in self.routes.get((fed, port), ()):
                msg = self.channels[conn.id].send_control("close", ref_now)
                if msg is not None:
                    send_frame(self.links[conn.id].tx, Tag(0), CLOSE_PORT,
                               canonical_json({"at": msg.deliver_at}).encode())

    # -- threads ---------------------------------------------------------------

    def fail(self, status: str, message: str) -> None:
        with self._lock:
            if self.status == STATUS_OK:
                self.status, self.fault = status, message
        self.stopping.set()

    def _federate_loop(self, fid: str) -> None:
        fed = self.federates[fid]
        inbox = self.inboxes[fid]
        wakeups = self._wakeups[fid]
        try:
            fed.step(self.clock.now())
            while not self.stopping.is_set():
                timeout = 0.05
                if wakeups:
                    timeout = min(timeout, self.clock.seconds_until(wakeups[0]))
                try:
                    items = [inbox.get(timeout=timeout)]
                except queue.Empty:
                    items = []
                while True:
                    try:
                        items.append(inbox.get_nowait())
                    except queue.Empty:
                        break
                now = self.clock.now()
                for what, port, msg in items:
                    if what == "close":
                        fed.receive_close(port, now)
                    else:
                        fed.receive(port, msg, now)
                while wakeups and wakeups[0] <= now:
                    heapq.heappop(wakeups)
                fed.step(now)
        except TransportFault as exc:
            self.fail(STATUS_TRANSPORT_FAULT, str(exc))
        except ChannelOrderError as exc:
            self.fail(STATUS_SCENARIO_ERROR, str(exc))
        except Exception as exc:  # surface crashes instead of hanging the run
            log.exception("federate %s crashed", fid)
            self.fail(STATUS_SCENARIO_ERROR, f"{fid}: {exc!r}")

    def _settled(self) -> bool:
        done = all(f.finished and not f.tardy_queue and f.run is None for f in self.federates.values())
        return done and all(q.empty() for q in self.inboxes.values())

    def run(self) -> RunResult:
        for link in self.links.values():
            link.thread.start()
        threads = [threading.Thread(target=self._federate_loop, args=(fid,), name=f"federate {fid}",
                                    daemon=True) for fid in self.federates]
        for t in threads:
            t.start()
        deadline = self.spec.duration + int(self.grace * 1e9 * self.clock.speed)
        quiet_since = None
        while not self.stopping.is_set():
            time.sleep(0.01)
            now = self.clock.now()
            if self._settled():
                # let in-flight frames (late arrivals) land before stopping
                quiet_since = quiet_since if quiet_since is not None else now
                if now - quiet_since >= int(0.1 * 1e9 * self.clock.speed):
                    break
            else:
                quiet_since = None
            if now > deadline:
                break
        self.stopping.set()
        for t in threads:
            t.join(timeout=2.0)
        for link in self.links.values():
            link.close()
        now = self.clock.now()
        stalls = []
        if self.status == STATUS_OK:
            for fid, fed in self.federates.items():
                reason = fed.blocked_reason()
                if reason is not None:
                    stalls.append({"federate": fid, **reason})
                    self.record(fid, "stall", now, fed.clock.local_time(now), None, None, reason)
            if stalls:
                self.status = STATUS_STALL
        counts = tally(self.channels.values(), self.events, self.federates.values())
        stats = {fid: fed.stats.as_dict() for fid, fed in self.federates.items()}
        end = {
            "status": self.status,
            "reference_time": now,
            "counts": counts,
            "federates": {fid: {**stats[fid], "final_state": digest(fed.state), "finished": fed.finished}
                          for fid, fed in self.federates.items()},
        }
        if self.fault:
            end["fault"] = self.fault
        if stalls:
            end["stalls"] = stalls
        meta = {**federation_meta(self.spec, self.seed), "mode": "realtime", "speed": self.clock.speed}
        return RunResult(Trace(meta, self.events, end), self.status, stalls, self.fault, counts, stats, now)


def run_realtime(spec: FederationSpec, seed: Optional[int] = None, speed: float = 1.0,
                 grace: float = 1.0) -> RunResult:
    """Run ``spec`` against the host clock, one thread per federate."""
    return RealtimeRun(spec, seed, speed, grace).run()
