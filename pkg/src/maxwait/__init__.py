"""maxwait: decentralized tag-ordered coordination with configurable waiting.

Federates process events in tag order.  Before advancing to a tag a
federate waits until every input is known up to that tag, or until its
local clock passes the tag time plus its ``maxwait``.  The package holds
the federate engine, a deterministic network simulator, a trace checker
and a catalog of worked scenarios.
"""

from .federate import Federate, can_advance, check_deadline, fire_timer, resolve_absent
from .model import (
    ActionSpec, ConnectionSpec, Context, FederateSpec, FederationSpec, ReactionSpec,
    TimerSpec, reaction_body,
)
from .netsim import Channel, ChannelModel, FixedTrace, Spike, Uniform, inject_spike, partition
from .runtime import RunResult, run_federation
from .tags import (
    FOREVER, MAX_TAG, MIN_TAG, MSEC, NSEC, SEC, USEC, ZERO, ConfigurationError, Tag,
    add_delay, compare_tags, format_tag, parse_duration, parse_tag,
)
from .timebase import ClockModel, VirtualTimeline
from .trace import Trace, TraceEvent, read_trace

__version__ = "0.1.0"

__all__ = [
    "ActionSpec", "Channel", "ChannelModel", "ClockModel", "ConfigurationError",
    "ConnectionSpec", "Context", "FOREVER", "Federate", "FederateSpec", "FederationSpec",
    "FixedTrace", "MAX_TAG", "MIN_TAG", "MSEC", "NSEC", "ReactionSpec", "RunResult", "SEC",
    "Spike", "Tag", "TimerSpec", "Trace", "TraceEvent", "USEC", "Uniform", "VirtualTimeline",
    "ZERO", "add_delay", "can_advance", "check_deadline", "compare_tags", "fire_timer",
    "format_tag", "inject_spike", "parse_duration", "parse_tag", "partition",
    "reaction_body", "read_trace", "resolve_absent", "run_federation",
]
