import socket
import time

import pytest
from conftest import pipeline

from maxwait.checker import check_fifo, message_accounting
from maxwait.config import Overrides
from maxwait.model import ReactionSpec
from maxwait.netsim import FrameReader, send_frame
from maxwait.realtime import ScaledClock, run_realtime
from maxwait.scenarios import build
from maxwait.tags import FOREVER, MSEC, SEC, Tag


class TestScaledClock:
    def test_speed_up(self):
        clock = ScaledClock(10.0)
        time.sleep(0.02)
        assert clock.now() >= 190 * MSEC

    def test_wait_is_scaled(self):
        clock = ScaledClock(4.0)
        assert clock.seconds_until(clock.now() + SEC) == pytest.approx(0.25, abs=0.01)
        assert clock.seconds_until(0) == 0.0

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            ScaledClock(0)


class TestRealtimeRuns:
    @pytest.mark.parametrize("name", ["rpc_futures", "aircraft_door", "let_pattern"])
    def test_scenarios_finish(self, name):
        built = build(name, {"duration": "2s"})
        r = run_realtime(built.spec, 0, speed=4.0)
        assert r.status == "ok", (r.stalls, r.fault)
        assert r.trace.meta["mode"] == "realtime"
        acc = message_accounting(r.trace)
        assert acc["balanced"]
        assert check_fifo(r.trace) == []

    def test_pipeline_timing(self):
        spec = pipeline([ReactionSpec("rx", "test.log", ("inp",))], maxwait=FOREVER, latency=20 * MSEC,
                        duration=400 * MSEC)
        r = run_realtime(spec, 0, speed=2.0)
        assert r.ok
        lat = [e.local_time - e.tag.time for e in r.trace.of("dst", "deliver")]
        assert len(lat) == 5
        # the host clock adds scheduling delay, never removes latency
        assert all(20 * MSEC <= x < 120 * MSEC for x in lat)

    def test_forever_stall_is_reported(self):
        spec = Overrides(partitions=[("camera.ramp_present", 0)]).apply(build("aircraft_door", {"duration": "2s"}).spec)
        r = run_realtime(spec, 0, speed=8.0, grace=0.2)
        assert r.status == "stall"
        assert r.stalls[0]["federate"] == "door"


class TestWire:
    def test_frames_cross_a_socketpair(self):
        a, b = socket.socketpair()
        try:
            send_frame(a, Tag(5, 1), 3, b"{}")
            send_frame(a, Tag(7), 4, b"[1]")
            a.shutdown(socket.SHUT_WR)
            reader = FrameReader()
            frames = []
            while chunk := b.recv(3):
                frames.extend(reader.feed(chunk))
            assert frames == [(Tag(5, 1), 3, b"{}"), (Tag(7), 4, b"[1]")]
        finally:
            a.close()
            b.close()
