"""Declarative description of a federation.

A :class:`FederationSpec` lists federates, the connections between their
ports, per-connection channel models and per-federate clock models.
Reaction bodies are plain functions ``body(ctx)`` registered under a
dotted name with :func:`reaction_body`, so a federation can be written to
and read from a scenario file.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Union

from .netsim import ChannelModel
from .tags import FOREVER, Duration, Tag, ZERO, validate_maxwait
from .timebase import ClockModel

Body = Callable[["Context"], None]

_BODIES: dict[str, Body] = {}
_BODY_NAMES: dict[Body, str] = {}


def reaction_body(name: str) -> Callable[[Body], Body]:
    """Register ``fn`` as the reaction body called ``name``."""

    def register(fn: Body) -> Body:
        if name in _BODIES and _BODIES[name] is not fn:
            raise ValueError(f"reaction body {name!r} already registered")
        _BODIES[name] = fn
        _BODY_NAMES[fn] = name
        return fn

    return register


def lookup_body(ref: Union[str, Body, None]) -> Optional[Body]:
    if ref is None or callable(ref):
        return ref
    try:
        return _BODIES[ref]
    except KeyError:
        raise KeyError(f"no reaction body registered as {ref!r}") from None


def body_name(ref: Union[str, Body, None]) -> Optional[str]:
    if ref is None or isinstance(ref, str):
        return ref
    try:
        return _BODY_NAMES[ref]
    except KeyError:
        raise ValueError(f"body {ref!r} is not registered; cannot serialize it") from None


def registered_bodies() -> list[str]:
    return sorted(_BODIES)


TARDY_POLICIES = ("none", "handler", "pass_through")


@dataclass
class ReactionSpec:
    """One reaction of a federate.

    ``triggers`` may name input ports, timers and actions; ``uses`` names
    input ports read without triggering.  ``tardy`` selects what happens to
    a tardy message on a port this reaction depends on: ``"none"`` drops
    it, ``"handler"`` runs ``tardy_handler`` and ``"pass_through"`` runs the
    ordinary body.
    """

    name: str
    body: Union[str, Body]
    triggers: tuple[str, ...]
    uses: tuple[str, ...] = ()
    effects: tuple[str, ...] = ()
    deadline: Optional[int] = None
    deadline_handler: Union[str, Body, None] = None
    tardy: str = "none"
    tardy_handler: Union[str, Body, None] = None
    compute_time: int = 0
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.triggers = tuple(self.triggers)
        self.uses = tuple(self.uses)
        self.effects = tuple(self.effects)
        if set(self.triggers) & set(self.uses):
            raise ValueError(f"reaction {self.name}: a port cannot both trigger and be used")
        if not self.triggers:
            raise ValueError(f"reaction {self.name}: needs at least one trigger")
        if self.tardy not in TARDY_POLICIES:
            raise ValueError(f"reaction {self.name}: unknown tardy policy {self.tardy!r}")
        if self.tardy == "handler" and self.tardy_handler is None:
            raise ValueError(f"reaction {self.name}: tardy='handler' needs a tardy_handler")
        if self.deadline is not None and self.deadline_handler is None:
            raise ValueError(f"reaction {self.name}: a deadline needs a violation handler")

    @property
    def depends_on(self) -> tuple[str, ...]:
        return self.triggers + self.uses


@dataclass(frozen=True)
class TimerSpec:
    name: str
    offset: int = 0
    period: Optional[int] = None

    def __post_init__(self) -> None:
        if self.offset < 0:
            raise ValueError(f"timer {self.name}: negative offset")
        if self.period is not None and self.period <= 0:
            raise ValueError(f"timer {self.name}: period must be positive")


@dataclass(frozen=True)
class ActionSpec:
    """Scripted local events: ``(time_ns, value)`` pairs at microstep 0."""

    name: str
    events: tuple[tuple[int, Any], ...] = ()

    def __post_init__(self) -> None:
        times = [t for t, _ in self.events]
        if times != sorted(times) or len(set(times)) != len(times):
            raise ValueError(f"action {self.name}: event times must be strictly increasing")


@dataclass
class FederateSpec:
    id: str
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    reactions: list[ReactionSpec] = field(default_factory=list)
    timers: list[TimerSpec] = field(default_factory=list)
    actions: list[ActionSpec] = field(default_factory=list)
    state: dict[str, Any] = field(default_factory=dict)
    maxwait: Duration = ZERO

    def __post_init__(self) -> None:
        self.inputs = tuple(self.inputs)
        self.outputs = tuple(self.outputs)
        self.maxwait = validate_maxwait(self.maxwait)
        local = [t.name for t in self.timers] + [a.name for a in self.actions]
        names = list(self.inputs) + list(self.outputs) + local
        if len(set(names)) != len(names):
            raise ValueError(f"federate {self.id}: duplicate port/timer/action name")
        sources = set(self.inputs) | set(local)
        for r in self.reactions:
            for p in r.triggers:
                if p not in sources:
                    raise ValueError(f"federate {self.id}: reaction {r.name} triggered by unknown {p!r}")
            for p in r.uses:
                if p not in self.inputs:
                    raise ValueError(f"federate {self.id}: reaction {r.name} uses unknown input {p!r}")
            for p in r.effects:
                if p not in self.outputs:
                    raise ValueError(f"federate {self.id}: reaction {r.name} sets unknown output {p!r}")


@dataclass
class ConnectionSpec:
    """``source`` and ``dest`` are ``"federate.port"`` references.

    ``after=None`` keeps the tag; an integer applies :func:`~maxwait.tags.add_delay`.
    ``absent_after=0`` means no gating; a positive value or ``FOREVER``
    holds back the reactions that depend on the destination port.
    """

    source: str
    dest: str
    after: Optional[int] = None
    absent_after: Duration = ZERO

    def __post_init__(self) -> None:
        for ref in (self.source, self.dest):
            if ref.count(".") != 1:
                raise ValueError(f"port reference {ref!r} must be 'federate.port'")
        if self.after is not None and self.after < 0:
            raise ValueError("after delay must be non-negative")
        validate_maxwait(self.absent_after)

    @property
    def id(self) -> str:
        return f"{self.source}->{self.dest}"

    @property
    def source_federate(self) -> str:
        return self.source.split(".")[0]

    @property
    def source_port(self) -> str:
        return self.source.split(".")[1]

    @property
    def dest_federate(self) -> str:
        return self.dest.split(".")[0]

    @property
    def dest_port(self) -> str:
        return self.dest.split(".")[1]


@dataclass
class FederationSpec:
    name: str
    federates: list[FederateSpec]
    connections: list[ConnectionSpec] = field(default_factory=list)
    channels: dict[str, ChannelModel] = field(default_factory=dict)
    default_channel: ChannelModel = field(default_factory=ChannelModel)
    clocks: dict[str, ClockModel] = field(default_factory=dict)
    duration: int = 10 * 1_000_000_000
    seed: int = 0
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        ids = [f.id for f in self.federates]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate federate id")
        by_id = {f.id: f for f in self.federates}
        seen_dest = set()
        for c in self.connections:
            src, dst = by_id.get(c.source_federate), by_id.get(c.dest_federate)
            if src is None or c.source_port not in src.outputs:
                raise ValueError(f"connection {c.id}: unknown source output {c.source}")
            if dst is None or c.dest_port not in dst.inputs:
                raise ValueError(f"connection {c.id}: unknown destination input {c.dest}")
            if c.dest in seen_dest:
                raise ValueError(f"input {c.dest} has more than one source")
            seen_dest.add(c.dest)
        known = {c.id for c in self.connections}
        for cid in self.channels:
            if cid not in known:
                raise ValueError(f"channel model for unknown connection {cid!r}")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")

    def federate(self, fid: str) -> FederateSpec:
        for f in self.federates:
            if f.id == fid:
                return f
        raise KeyError(fid)

    def channel_model(self, connection_id: str) -> ChannelModel:
        return self.channels.get(connection_id, self.default_channel)

    def select_connections(self, selector: str) -> list[ConnectionSpec]:
        """Connections matching ``"*"``, ``"fed.port"`` (either end) or ``"src->dst"``."""
        if selector == "*":
            return list(self.connections)
        if "->" in selector:
            hits = [c for c in self.connections if c.id == selector.replace(" ", "")]
        else:
            hits = [c for c in self.connections if selector in (c.source, c.dest)]
        if not hits:
            raise KeyError(f"no connection matches {selector!r}")
        return hits

    def copy(self) -> "FederationSpec":
        return copy.deepcopy(self)


class Context:
    """What a reaction body sees.

    ``state`` is a private copy of the federate state; it is committed only
    if the body returns normally.
    """

    def __init__(
        self,
        federate: str,
        reaction: str,
        tag: Tag,
        local_time: int,
        state: dict[str, Any],
        inputs: dict[str, Any],
        effects: tuple[str, ...],
        params: dict[str, Any],
        intended_tag: Optional[Tag] = None,
    ):
        self.federate = federate
        self.reaction = reaction
        self.tag = tag
        self.local_time = local_time
        self.state = state
        self.params = params
        self.intended_tag = intended_tag
        self._inputs = inputs
        self._effects = effects
        self.outputs: dict[str, Any] = {}
        self.notes: dict[str, Any] = {}
        self.new_maxwait: Optional[Duration] = None
        self.spent = 0

    @property
    def tardy(self) -> bool:
        return self.intended_tag is not None

    def present(self, name: str) -> bool:
        return name in self._inputs

    def get(self, name: str, default: Any = None) -> Any:
        return self._inputs.get(name, default)

    @property
    def present_names(self) -> list[str]:
        return sorted(self._inputs)

    def set(self, port: str, value: Any) -> None:
        if port not in self._effects:
            raise PermissionError(f"{self.federate}.{self.reaction} may not set {port!r}")
        self.outputs[port] = value

    def set_maxwait(self, value: Duration) -> None:
        """Change this federate's maxwait from the next advancement decision on."""
        self.new_maxwait = validate_maxwait(value)

    def spend(self, duration: int) -> None:
        """Account ``duration`` ns of physical execution time to this invocation."""
        if duration < 0:
            raise ValueError("cannot spend negative time")
        self.spent += duration

    def note(self, **items: Any) -> None:
        """Attach JSON-serializable annotations to this invocation's trace record."""
        self.notes.update(items)


__all__ = [
    "ActionSpec", "Body", "ConnectionSpec", "Context", "FOREVER", "FederateSpec",
    "FederationSpec", "ReactionSpec", "TimerSpec", "body_name", "lookup_body",
    "reaction_body", "registered_bodies",
]
