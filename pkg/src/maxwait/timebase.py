"""Physical clocks and the virtual timeline.

Simulated physical time is one hidden reference timeline.  Each federate
reads it through a :class:`ClockModel` that adds a constant offset and a
linear drift, which is how clock-synchronization error enters a run.
"""

from __future__ import annotations

import heapq
import itertools
import time as _time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterator, Optional

from .tags import Duration, FOREVER

PPM = 1_000_000


@dataclass(frozen=True)
class ClockModel:
    """A federate's view of physical time.

    ``offset`` is this clock minus the reference clock in ns; ``drift_ppm``
    is a rate error in parts per million.  ``sync_bound``, when given, is
    the declared clock-synchronization error bound and ``|offset|`` must
    not exceed it.
    """

    offset: int = 0
    drift_ppm: float = 0
    mode: str = "simulated"
    sync_bound: Optional[int] = None

    def __post_init__(self) -> None:
        if self.mode not in ("simulated", "host"):
            raise ValueError(f"unknown clock mode {self.mode!r}")
        if self.sync_bound is not None and abs(self.offset) > self.sync_bound:
            raise ValueError(
                f"clock offset {self.offset} ns exceeds sync bound {self.sync_bound} ns"
            )
        if Fraction(str(self.drift_ppm)) <= -PPM:
            raise ValueError("drift must be greater than -1e6 ppm")

    @property
    def _drift(self) -> Fraction:
        return Fraction(str(self.drift_ppm)) / PPM

    def local_time(self, reference_now: int) -> int:
        """Local reading when the reference clock shows ``reference_now``."""
        if self.drift_ppm == 0:
            return reference_now + self.offset
        return reference_now + int(reference_now * self._drift // 1) + self.offset

    def reference_time_for(self, local: Duration) -> Duration:
        """Earliest reference time at which this clock reads at least ``local``."""
        if local == FOREVER:
            return FOREVER
        if self.drift_ppm == 0:
            return local - self.offset
        guess = int((local - self.offset) / (1 + self._drift))
        while self.local_time(guess) < local:
            guess += 1
        while self.local_time(guess - 1) >= local:
            guess -= 1
        return guess


class HostClock:
    """Monotonic host clock, zeroed at construction, viewed through a model."""

    def __init__(self, model: ClockModel = ClockModel(mode="host"), start_ns: Optional[int] = None):
        self.model = model
        self.start_ns = _time.monotonic_ns() if start_ns is None else start_ns

    def reference_now(self) -> int:
        return _time.monotonic_ns() - self.start_ns

    def read(self) -> int:
        return self.model.local_time(self.reference_now())


def read_clock(clocks: dict[str, ClockModel], fed: str, reference_now: int) -> int:
    """Physical time as seen by ``fed`` at reference time ``reference_now``."""
    return clocks.get(fed, ClockModel()).local_time(reference_now)


@dataclass(order=True)
class Wakeup:
    time: int
    federate: str
    seq: int
    purpose: str = field(compare=False)
    payload: Any = field(default=None, compare=False)


class TimelineError(RuntimeError):
    pass


class VirtualTimeline:
    """Time-ordered agenda driving a virtual-time run.

    Entries due at the same instant come out ordered by federate id, then
    by insertion order.  ``now`` never decreases.
    """

    def __init__(self) -> None:
        self.now = 0
        self._heap: list[Wakeup] = []
        self._seq = itertools.count()

    def __len__(self) -> int:
        return len(self._heap)

    def __iter__(self) -> Iterator[Wakeup]:
        return iter(sorted(self._heap))

    def schedule(self, when: int, federate: str, purpose: str, payload: Any = None) -> Wakeup:
        if when < self.now:
            raise TimelineError(f"wakeup at {when} is before now={self.now}")
        entry = Wakeup(when, federate, next(self._seq), purpose, payload)
        heapq.heappush(self._heap, entry)
        return entry

    def peek_time(self) -> Optional[int]:
        return self._heap[0].time if self._heap else None

    def advance_to_next_wakeup(self) -> Optional[tuple[int, list[Wakeup]]]:
        """Jump to the earliest wakeup and return ``(now, due entries)``.

        Returns ``None`` when the agenda is empty; the caller decides
        whether that is quiescence or a deadlock.
        """
        if not self._heap:
            return None
        when = self._heap[0].time
        assert when >= self.now, "virtual time went backwards"
        self.now = when
        due = []
        while self._heap and self._heap[0].time == when:
            due.append(heapq.heappop(self._heap))
        return when, due
