"""Tags, durations and maxwait values.

A tag is the logical timestamp carried by every event: a signed time in
nanoseconds relative to the federation start plus a microstep that orders
events sharing the same time value.  Tags are totally ordered,
lexicographically on ``(time, microstep)``.

Durations are plain integers in nanoseconds.  ``FOREVER`` is the one
non-finite duration and compares greater than every integer, so the
maxwait timeout ``local_now >= tag.time + maxwait`` is simply never true
when the maxwait is ``FOREVER``.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction
from dataclasses import dataclass
from typing import Union

NSEC = 1
USEC = 1_000
MSEC = 1_000_000
SEC = 1_000_000_000

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1
MICROSTEP_MAX = 2**32 - 1

#: Infinite duration ("forever").  A float so arithmetic and comparisons
#: against integer nanoseconds behave without special cases.
FOREVER: float = math.inf

#: The zero delay.  On a connection it means "one microstep later".
ZERO = 0

Duration = Union[int, float]


class ConfigurationError(ValueError):
    """Invalid federation configuration (bad duration, overflow, ...)."""


@dataclass(frozen=True, order=True)
class Tag:
    """Logical timestamp ``(time, microstep)``."""

    time: int
    microstep: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.time, int) or isinstance(self.time, bool):
            raise TypeError(f"tag time must be an int, got {self.time!r}")
        if not INT64_MIN <= self.time <= INT64_MAX:
            raise ConfigurationError(f"tag time {self.time} overflows 64 bits")
        if not 0 <= self.microstep <= MICROSTEP_MAX:
            raise ConfigurationError(f"microstep {self.microstep} out of range")

    def __str__(self) -> str:
        return format_tag(self)

    def __repr__(self) -> str:
        return f"Tag({format_tag(self)})"

    @classmethod
    def parse(cls, text: str) -> "Tag":
        return parse_tag(text)


MIN_TAG = Tag(INT64_MIN, 0)
MAX_TAG = Tag(INT64_MAX, MICROSTEP_MAX)


def compare_tags(a: Tag, b: Tag) -> int:
    """Return -1, 0 or 1 as ``a`` is less than, equal to or greater than ``b``."""
    if a.time != b.time:
        return -1 if a.time < b.time else 1
    if a.microstep != b.microstep:
        return -1 if a.microstep < b.microstep else 1
    return 0


def add_delay(tag: Tag, delay: int) -> Tag:
    """Tag of a message sent at ``tag`` over a connection with logical ``delay``.

    A positive delay moves to ``(time + delay, 0)``; a zero delay stays at
    the same time one microstep later, so every hop strictly increases the tag.
    """
    if delay < 0:
        raise ConfigurationError(f"negative logical delay {delay}")
    if delay == 0:
        if tag.microstep >= MICROSTEP_MAX:
            raise ConfigurationError(f"microstep overflow at {tag}")
        return Tag(tag.time, tag.microstep + 1)
    if not isinstance(delay, int):
        raise ConfigurationError(f"logical delay must be a finite integer, got {delay!r}")
    if tag.time > INT64_MAX - delay:
        raise ConfigurationError(f"tag time overflow: {tag} + {delay} ns")
    return Tag(tag.time + delay, 0)


def format_tag(tag: Tag) -> str:
    """Canonical text form, e.g. ``5.000000000@1``."""
    sign = "-" if tag.time < 0 else ""
    secs, nsecs = divmod(abs(tag.time), SEC)
    return f"{sign}{secs}.{nsecs:09d}@{tag.microstep}"


_TAG_RE = re.compile(r"^(-?)(\d+)\.(\d{9})@(\d+)$")


def parse_tag(text: str) -> Tag:
    m = _TAG_RE.match(text.strip())
    if not m:
        raise ValueError(f"malformed tag {text!r}")
    sign, secs, nsecs, micro = m.groups()
    time = int(secs) * SEC + int(nsecs)
    return Tag(-time if sign else time, int(micro))


_UNITS = {
    "ns": NSEC, "nsec": NSEC, "nsecs": NSEC,
    "us": USEC, "usec": USEC, "usecs": USEC,
    "ms": MSEC, "msec": MSEC, "msecs": MSEC,
    "s": SEC, "sec": SEC, "secs": SEC, "second": SEC, "seconds": SEC,
    "min": 60 * SEC, "minute": 60 * SEC, "minutes": 60 * SEC,
}

_DURATION_RE = re.compile(r"^\s*([+-]?\d+(?:\.\d+)?)\s*([a-zA-Z]*)\s*$")


def parse_duration(value: Union[str, int, float], *, signed: bool = False) -> Duration:
    """Parse ``"50ms"``, ``"10 s"``, ``"forever"`` or a number of nanoseconds."""
    if isinstance(value, bool):
        raise ConfigurationError(f"not a duration: {value!r}")
    if isinstance(value, (int, float)):
        if value == math.inf:
            return FOREVER
        if isinstance(value, float) and not value.is_integer():
            raise ConfigurationError(f"duration in ns must be integral: {value!r}")
        ns = int(value)
    else:
        text = value.strip()
        if text.lower() in ("forever", "inf", "infinity", "never"):
            return FOREVER
        m = _DURATION_RE.match(text)
        if not m:
            raise ConfigurationError(f"malformed duration {value!r}")
        number, unit = m.groups()
        unit = unit.lower() or "ns"
        if unit not in _UNITS:
            raise ConfigurationError(f"unknown time unit {unit!r} in {value!r}")
        scaled = Fraction(number) * _UNITS[unit]
        if scaled.denominator != 1:
            raise ConfigurationError(f"duration {value!r} is not a whole number of ns")
        ns = int(scaled)
    if ns < 0 and not signed:
        raise ConfigurationError(f"negative duration {value!r}")
    if not INT64_MIN <= ns <= INT64_MAX:
        raise ConfigurationError(f"duration {value!r} overflows 64 bits")
    return ns


def format_duration(ns: Duration) -> str:
    """Shortest exact unit form: ``forever``, ``10s``, ``30ms``, ``1500us``."""
    if ns == FOREVER:
        return "forever"
    ns = int(ns)
    for unit, scale in (("s", SEC), ("ms", MSEC), ("us", USEC)):
        if ns % scale == 0 and ns != 0:
            return f"{ns // scale}{unit}"
    return f"{ns}ns"


def validate_maxwait(value: Duration) -> Duration:
    if value == FOREVER:
        return FOREVER
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ConfigurationError(f"maxwait must be forever or a non-negative ns count, got {value!r}")
    return value


def is_forever(value: Duration) -> bool:
    return value == FOREVER
