"""Reliable in-order tagged-message channels.

A :class:`Channel` turns a send at reference time ``now`` into a delivery
time drawn from its :class:`ChannelModel`: base latency, plus jitter, plus
any latency spike active at the send time.  Delivery times are clamped so
that a channel never reorders its messages.  A partitioned channel drops
every message sent at or after the partition instant, which is the
infinite-latency limit.

The module also carries the socket wire format used by the real-time
driver: big-endian frames ``[u32 length][i64 time][u32 microstep][u32
port][payload]`` where ``length`` counts every byte after itself.
"""

from __future__ import annotations

import socket
import struct
import zlib
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Union

import numpy as np

from .tags import FOREVER, Duration, Tag, format_tag


class TransportFault(RuntimeError):
    """The reliable in-order delivery assumption was violated."""


class ChannelOrderError(ValueError):
    """A sender produced a non-increasing tag on one channel."""


@dataclass(frozen=True)
class Uniform:
    """Integer jitter drawn uniformly from ``[lo, hi]`` ns."""

    lo: int
    hi: int

    def __post_init__(self) -> None:
        if not 0 <= self.lo <= self.hi:
            raise ValueError(f"need 0 <= lo <= hi, got uniform({self.lo}, {self.hi})")


@dataclass(frozen=True)
class FixedTrace:
    """Jitter replayed from a list of samples, cycling when exhausted."""

    samples: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.samples or any(s < 0 for s in self.samples):
            raise ValueError("fixed trace needs at least one non-negative sample")


Jitter = Union[None, Uniform, FixedTrace]


@dataclass(frozen=True)
class Spike:
    """Extra latency for sends whose reference time falls in ``[start, end]``."""

    start: int
    end: int
    extra: int

    def covers(self, t: int) -> bool:
        return self.start <= t <= self.end


@dataclass(frozen=True)
class ChannelModel:
    base_latency: int = 0
    jitter: Jitter = None
    spikes: tuple[Spike, ...] = ()
    partitioned_from: Duration = FOREVER

    def __post_init__(self) -> None:
        if self.base_latency < 0:
            raise ValueError("base latency must be non-negative")

    def extra_latency(self, send_time: int) -> int:
        # overlapping spike windows add up
        return sum(s.extra for s in self.spikes if s.covers(send_time))

    def is_partitioned(self, send_time: int) -> bool:
        return send_time >= self.partitioned_from


def inject_spike(model: ChannelModel, start: int, end: int, extra: int) -> ChannelModel:
    """Return ``model`` with ``extra`` latency for sends in ``[start, end]``.

    An empty window (``start == end``) leaves the model unchanged.
    """
    if start > end:
        raise ValueError(f"spike window start {start} after end {end}")
    if extra < 0:
        raise ValueError("spike extra latency must be non-negative")
    if start == end or extra == 0:
        return model
    return replace(model, spikes=model.spikes + (Spike(start, end, extra),))


def partition(model: ChannelModel, start: Duration) -> ChannelModel:
    """Return ``model`` with every send at or after ``start`` lost for good."""
    if start == FOREVER:
        return model
    return replace(model, partitioned_from=min(model.partitioned_from, start))


def channel_rng(seed: int, channel_id: str) -> np.random.Generator:
    """Per-channel random stream; adding a channel never perturbs the others."""
    return np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(channel_id.encode())])


@dataclass
class InFlightMessage:
    tag: Tag
    payload: Any
    channel: str
    sent_at: int
    deliver_at: int
    src_tag: Optional[Tag] = None
    seq: int = 0
    control: bool = False


@dataclass
class Channel:
    """One connection's simulated link.  Owned by a single driver."""

    id: str
    model: ChannelModel = field(default_factory=ChannelModel)
    seed: int = 0
    last_tag: Optional[Tag] = None
    last_delivery: int = -(2**63)
    sent: int = 0
    lost: int = 0

    def __post_init__(self) -> None:
        self._rng = channel_rng(self.seed, self.id)
        self._trace_pos = 0

    def sample_latency(self, now: int) -> int:
        latency = self.model.base_latency
        jitter = self.model.jitter
        if isinstance(jitter, Uniform):
            latency += int(self._rng.integers(jitter.lo, jitter.hi, endpoint=True))
        elif isinstance(jitter, FixedTrace):
            latency += jitter.samples[self._trace_pos % len(jitter.samples)]
            self._trace_pos += 1
        return latency + self.model.extra_latency(now)

    def send(self, tag: Tag, payload: Any, now: int, src_tag: Optional[Tag] = None) -> Optional[InFlightMessage]:
        """Enqueue a message; ``None`` means the channel is partitioned."""
        if self.last_tag is not None and tag <= self.last_tag:
            raise ChannelOrderError(
                f"channel {self.id}: tag {format_tag(tag)} not after {format_tag(self.last_tag)}"
            )
        self.last_tag = tag
        self.sent += 1
        latency = self.sample_latency(now)
        if self.model.is_partitioned(now):
            self.lost += 1
            return None
        deliver_at = max(now + latency, self.last_delivery)
        self.last_delivery = deliver_at
        return InFlightMessage(tag, payload, self.id, now, deliver_at, src_tag, self.sent)

    def send_control(self, payload: Any, now: int) -> Optional[InFlightMessage]:
        """Out-of-band end-of-stream marker; same latency and ordering, not counted."""
        if self.model.is_partitioned(now):
            return None
        deliver_at = max(now + self.model.base_latency + self.model.extra_latency(now), self.last_delivery)
        self.last_delivery = deliver_at
        return InFlightMessage(Tag(0), payload, self.id, now, deliver_at, control=True)


# --- wire format -----------------------------------------------------------

_HEADER = struct.Struct(">qII")
_LEN = struct.Struct(">I")
CLOSE_PORT = 0xFFFFFFFF


def encode_frame(tag: Tag, port_id: int, payload: bytes) -> bytes:
    body = _HEADER.pack(tag.time, tag.microstep, port_id) + payload
    return _LEN.pack(len(body)) + body


def decode_frame(buf: bytes) -> tuple[Tag, int, bytes, int]:
    """Decode one frame from the front of ``buf``.

    Returns ``(tag, port_id, payload, bytes consumed)``.  Raises
    ``ValueError`` if ``buf`` holds less than a whole frame.
    """
    if len(buf) < _LEN.size:
        raise ValueError("incomplete frame header")
    (length,) = _LEN.unpack_from(buf)
    if length < _HEADER.size:
        raise ValueError(f"frame length {length} shorter than header")
    end = _LEN.size + length
    if len(buf) < end:
        raise ValueError("incomplete frame body")
    time, micro, port = _HEADER.unpack_from(buf, _LEN.size)
    payload = bytes(buf[_LEN.size + _HEADER.size:end])
    return Tag(time, micro), port, payload, end


class FrameReader:
    """Incremental decoder for a byte stream of frames."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[tuple[Tag, int, bytes]]:
        self._buf += data
        frames = []
        while True:
            try:
                tag, port, payload, used = decode_frame(self._buf)
            except ValueError:
                break
            del self._buf[:used]
            frames.append((tag, port, payload))
        return frames

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


def send_frame(sock: socket.socket, tag: Tag, port_id: int, payload: bytes) -> None:
    sock.sendall(encode_frame(tag, port_id, payload))


def recv_frame(sock: socket.socket) -> Optional[tuple[Tag, int, bytes]]:
    """Blocking read of one frame; ``None`` on a clean EOF."""
    header = _recv_exact(sock, _LEN.size)
    if header is None:
        return None
    (length,) = _LEN.unpack(header)
    body = _recv_exact(sock, length)
    if body is None:
        raise TransportFault("connection closed mid-frame")
    tag, port, payload, _ = decode_frame(header + body)
    return tag, port, payload


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    chunks = bytearray()
    while len(chunks) < n:
        chunk = sock.recv(n - len(chunks))
        if not chunk:
            if chunks:
                raise TransportFault("connection closed mid-frame")
            return None
        chunks += chunk
    return bytes(chunks)
