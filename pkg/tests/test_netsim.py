import socket
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maxwait.netsim import (
    CLOSE_PORT, Channel, ChannelModel, ChannelOrderError, FixedTrace, FrameReader, Spike, TransportFault,
    Uniform, decode_frame, encode_frame, inject_spike, partition, recv_frame, send_frame,
)
from maxwait.tags import FOREVER, MSEC, Tag


def send_all(ch, times):
    return [ch.send(Tag(t), None, t).deliver_at for t in times]


class TestSend:
    def test_fixed_latency(self):
        ch = Channel("a.o->b.i", ChannelModel(5 * MSEC))
        assert ch.send(Tag(0), "x", 0).deliver_at == 5 * MSEC

    def test_in_order_clamp(self):
        ch = Channel("c", ChannelModel(0, FixedTrace((10 * MSEC, 2 * MSEC))))
        assert send_all(ch, [0, 1 * MSEC]) == [10 * MSEC, 10 * MSEC]

    def test_uniform_jitter_matches_independent_replay(self):
        seed, cid = 42, "lidar.lid->controller.lid"
        ch = Channel(cid, ChannelModel(5 * MSEC, Uniform(0, 80 * MSEC)), seed)
        times = [i * 3 * MSEC for i in range(100)]
        got = send_all(ch, times)
        # standalone re-sampler: same stream key, same draws, clamp applied by hand
        rng = np.random.default_rng([seed, zlib.crc32(cid.encode())])
        expect, last = [], None
        for t in times:
            d = t + 5 * MSEC + int(rng.integers(0, 80 * MSEC, endpoint=True))
            last = d if last is None else max(d, last)
            expect.append(last)
        assert got == expect
        assert any(a == b for a, b in zip(got, got[1:]))  # the clamp did engage

    def test_streams_are_independent_per_channel(self):
        model = ChannelModel(0, Uniform(0, 80 * MSEC))
        alone = send_all(Channel("x", model, 7), range(0, 50 * MSEC, MSEC))
        ch_x, ch_y = Channel("x", model, 7), Channel("y", model, 7)
        mixed = []
        for t in range(0, 50 * MSEC, MSEC):
            mixed.append(ch_x.send(Tag(t), None, t).deliver_at)
            ch_y.send(Tag(t), None, t)
        assert mixed == alone

    def test_non_increasing_tag_is_a_scenario_error(self):
        ch = Channel("c")
        ch.send(Tag(5), None, 0)
        with pytest.raises(ChannelOrderError):
            ch.send(Tag(5), None, 1)

    @given(st.lists(st.integers(0, 20 * MSEC), min_size=1, max_size=30), st.integers(0, 2**31))
    def test_fifo_and_minimum_latency(self, gaps, seed):
        ch = Channel("c", ChannelModel(2 * MSEC, Uniform(0, 30 * MSEC)), seed)
        now, out = 0, []
        for i, g in enumerate(gaps):
            now += g
            msg = ch.send(Tag(now, i), None, now)
            assert msg.deliver_at >= now + 2 * MSEC
            out.append(msg.deliver_at)
        assert out == sorted(out)


class TestSpikes:
    def test_lidar_spike_arrives_after_radar(self):
        lidar = Channel("lidar", inject_spike(ChannelModel(5 * MSEC), 100 * MSEC, 160 * MSEC, 70 * MSEC))
        radar = Channel("radar", ChannelModel(5 * MSEC))
        t = 100 * MSEC
        assert lidar.send(Tag(t), None, t).deliver_at == 175 * MSEC
        assert radar.send(Tag(t), None, t).deliver_at == 105 * MSEC

    def test_outside_window_unaffected(self):
        ch = Channel("c", inject_spike(ChannelModel(5 * MSEC), 100 * MSEC, 160 * MSEC, 70 * MSEC))
        assert ch.send(Tag(50 * MSEC), None, 50 * MSEC).deliver_at == 55 * MSEC
        assert ch.send(Tag(161 * MSEC), None, 161 * MSEC).deliver_at == 166 * MSEC

    def test_empty_window_is_identity(self):
        m = ChannelModel(5 * MSEC)
        assert inject_spike(m, 10, 10, 99) == m

    def test_overlapping_windows_sum(self):
        m = inject_spike(inject_spike(ChannelModel(), 0, 10, 3), 5, 20, 4)
        assert [m.extra_latency(t) for t in (0, 7, 15, 21)] == [3, 7, 4, 0]

    def test_inverted_window_rejected(self):
        with pytest.raises(ValueError):
            inject_spike(ChannelModel(), 10, 5, 1)

    def test_spike_on_partitioned_channel_never_delivers(self):
        m = inject_spike(partition(ChannelModel(5 * MSEC), 0), 0, 100, 10)
        ch = Channel("c", m)
        assert ch.send(Tag(50), None, 50) is None
        assert (ch.sent, ch.lost) == (1, 1)


class TestPartition:
    def test_sends_after_partition_are_lost(self):
        ch = Channel("c", partition(ChannelModel(5 * MSEC), 2 * MSEC))
        assert ch.send(Tag(0), None, 0) is not None
        assert ch.send(Tag(2 * MSEC), None, 2 * MSEC) is None

    def test_partition_at_infinity_is_identity(self):
        m = ChannelModel(5 * MSEC)
        assert partition(m, FOREVER) == m

    def test_control_frames_obey_partition(self):
        ch = Channel("c", partition(ChannelModel(1), 0))
        assert ch.send_control("close", 0) is None
        assert ch.sent == 0


class TestWireFormat:
    def test_layout_is_big_endian(self):
        frame = encode_frame(Tag(1, 2), 3, b"hi")
        assert frame == bytes.fromhex("00000012" "0000000000000001" "00000002" "00000003") + b"hi"

    @given(st.integers(-(2**63), 2**63 - 1), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1),
           st.binary(max_size=200))
    def test_round_trip(self, t, m, port, payload):
        tag, p, body, used = decode_frame(encode_frame(Tag(t, m), port, payload) + b"extra")
        assert (tag, p, body) == (Tag(t, m), port, payload)
        assert used == 20 + len(payload)

    def test_incremental_reader(self):
        stream = b"".join(encode_frame(Tag(i), i, bytes([i]) * i) for i in range(5))
        reader = FrameReader()
        got = []
        for i in range(0, len(stream), 7):
            got += reader.feed(stream[i:i + 7])
        assert [(t.time, p, len(b)) for t, p, b in got] == [(i, i, i) for i in range(5)]
        assert reader.pending_bytes == 0

    def test_incomplete_frame(self):
        with pytest.raises(ValueError):
            decode_frame(encode_frame(Tag(0), 0, b"abc")[:-1])

    def test_over_a_socket_pair(self):
        a, b = socket.socketpair()
        with a, b:
            send_frame(a, Tag(5, 1), 7, b"payload")
            send_frame(a, Tag(0), CLOSE_PORT, b"")
            assert recv_frame(b) == (Tag(5, 1), 7, b"payload")
            assert recv_frame(b)[1] == CLOSE_PORT
            a.shutdown(socket.SHUT_WR)
            assert recv_frame(b) is None

    def test_eof_mid_frame_is_transport_fault(self):
        a, b = socket.socketpair()
        with a, b:
            a.sendall(encode_frame(Tag(1), 1, b"abcdef")[:-2])
            a.shutdown(socket.SHUT_WR)
            with pytest.raises(TransportFault):
                recv_frame(b)


def test_spike_covers_closed_window():
    s = Spike(100, 160, 70)
    assert s.covers(100) and s.covers(160) and not s.covers(161)
