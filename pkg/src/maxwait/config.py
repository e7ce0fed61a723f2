"""Federation files and run-time overrides.

A federation file is JSON.  Durations may be written as integers (ns) or
strings such as ``"30ms"`` or ``"forever"``.  Reaction bodies are named by
their registered names.  Instead of spelling out federates, a file may
name a catalog scenario::

    {"scenario": "bank_acid", "params": {"deposits": [10, 20, -5]}, "seed": 3}

Errors carry the JSON line number or the path of the offending field,
for example ``federates[1].reactions[0].tardy``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Union

from .model import (
    ActionSpec, ConnectionSpec, FederateSpec, FederationSpec, ReactionSpec, TimerSpec,
    body_name, lookup_body,
)
from .netsim import ChannelModel, FixedTrace, Spike, Uniform, inject_spike, partition
from .tags import FOREVER, ConfigurationError, format_duration, parse_duration
from .timebase import ClockModel


class ConfigError(ConfigurationError):
    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


# --- overrides --------------------------------------------------------------

def _split_once(text: str, sep: str, what: str) -> tuple[str, str]:
    if sep not in text:
        raise ConfigurationError(f"{what} {text!r}: expected '{sep}'")
    a, b = text.rsplit(sep, 1) if sep == "@" else text.split(sep, 1)
    return a.strip(), b.strip()


def parse_latency(text: str) -> tuple[str, int]:
    sel, dur = _split_once(text, "=", "--latency")
    return sel, int(parse_duration(dur))


def parse_jitter(text: str) -> tuple[str, int, int]:
    sel, rng = _split_once(text, "=", "--jitter")
    lo, hi = _split_once(rng, ":", "--jitter")
    return sel, int(parse_duration(lo)), int(parse_duration(hi))


def parse_spike(text: str) -> tuple[str, int, int, int]:
    sel, rest = _split_once(text, "@", "--spike")
    window, extra = _split_once(rest, "+", "--spike")
    start, end = _split_once(window, ":", "--spike")
    return sel, int(parse_duration(start)), int(parse_duration(end)), int(parse_duration(extra))


def parse_partition(text: str) -> tuple[str, Any]:
    sel, when = _split_once(text, "@", "--partition")
    return sel, parse_duration(when)


def parse_assignment(text: str, *, duration: bool = True) -> tuple[str, Any]:
    fed, value = _split_once(text, "=", "assignment")
    if duration:
        return fed, int(parse_duration(value, signed=True))
    try:
        return fed, float(value)
    except ValueError:
        raise ConfigurationError(f"{text!r}: {value!r} is not a number") from None


@dataclass
class Overrides:
    """Channel and clock changes applied on top of a built federation."""

    latency: list[tuple[str, int]] = field(default_factory=list)
    jitter: list[tuple[str, int, int]] = field(default_factory=list)
    spikes: list[tuple[str, int, int, int]] = field(default_factory=list)
    partitions: list[tuple[str, Any]] = field(default_factory=list)
    clock_offsets: dict[str, int] = field(default_factory=dict)
    drift_ppm: dict[str, float] = field(default_factory=dict)
    duration: Optional[int] = None

    def empty(self) -> bool:
        return not (self.latency or self.jitter or self.spikes or self.partitions
                    or self.clock_offsets or self.drift_ppm or self.duration is not None)

    def describe(self) -> dict[str, Any]:
        return {
            "latency": [[s, format_duration(d)] for s, d in self.latency],
            "jitter": [[s, format_duration(a), format_duration(b)] for s, a, b in self.jitter],
            "spikes": [[s, format_duration(a), format_duration(b), format_duration(x)] for s, a, b, x in self.spikes],
            "partitions": [[s, format_duration(t)] for s, t in self.partitions],
            "clock_offsets": {k: format_duration(v) for k, v in sorted(self.clock_offsets.items())},
            "drift_ppm": dict(sorted(self.drift_ppm.items())),
        }

    def apply(self, spec: FederationSpec) -> FederationSpec:
        spec = spec.copy()
        if self.duration is not None:
            spec.duration = self.duration

        def update(selector: str, fn) -> None:
            try:
                conns = spec.select_connections(selector)
            except KeyError as exc:
                raise ConfigurationError(str(exc.args[0])) from None
            for c in conns:
                spec.channels[c.id] = fn(spec.channel_model(c.id))

        for sel, base in self.latency:
            update(sel, lambda m, b=base: replace(m, base_latency=b))
        for sel, lo, hi in self.jitter:
            update(sel, lambda m, lo=lo, hi=hi: replace(m, jitter=Uniform(lo, hi) if hi else None))
        for sel, start, end, extra in self.spikes:
            update(sel, lambda m, s=start, e=end, x=extra: inject_spike(m, s, e, x))
        for sel, when in self.partitions:
            update(sel, lambda m, w=when: partition(m, w))
        ids = {f.id for f in spec.federates}
        for fed in set(self.clock_offsets) | set(self.drift_ppm):
            if fed not in ids:
                raise ConfigurationError(f"clock override for unknown federate {fed!r}")
        for fed in sorted(ids):
            if fed in self.clock_offsets or fed in self.drift_ppm:
                old = spec.clocks.get(fed, ClockModel())
                spec.clocks[fed] = replace(
                    old,
                    offset=self.clock_offsets.get(fed, old.offset),
                    drift_ppm=self.drift_ppm.get(fed, old.drift_ppm),
                )
        if not self.empty():
            spec.metadata["overrides"] = self.describe()
        return spec


# --- federation files -------------------------------------------------------------

def _dur(value: Any, where: str, *, signed: bool = False, allow_forever: bool = False) -> Any:
    try:
        d = parse_duration(value, signed=signed)
    except (ConfigurationError, ValueError, TypeError) as exc:
        raise ConfigError(where, str(exc)) from None
    if d == FOREVER and not allow_forever:
        raise ConfigError(where, "'forever' is not allowed here")
    return d


def _req(obj: dict, key: str, where: str) -> Any:
    if not isinstance(obj, dict):
        raise ConfigError(where, "expected an object")
    if key not in obj:
        raise ConfigError(f"{where}.{key}", "missing required field")
    return obj[key]


def _channel_from(obj: dict, where: str) -> ChannelModel:
    if not isinstance(obj, dict):
        raise ConfigError(where, "expected an object")
    jitter = None
    j = obj.get("jitter")
    if isinstance(j, dict) and "uniform" in j:
        lo, hi = j["uniform"]
        jitter = Uniform(_dur(lo, f"{where}.jitter.uniform[0]"), _dur(hi, f"{where}.jitter.uniform[1]"))
    elif isinstance(j, dict) and "trace" in j:
        jitter = FixedTrace(tuple(_dur(v, f"{where}.jitter.trace[{i}]") for i, v in enumerate(j["trace"])))
    elif j is not None:
        raise ConfigError(f"{where}.jitter", "expected {'uniform': [lo, hi]} or {'trace': [...]}")
    spikes = []
    for i, s in enumerate(obj.get("spikes", [])):
        w = f"{where}.spikes[{i}]"
        spikes.append(Spike(_dur(_req(s, "start", w), f"{w}.start"), _dur(_req(s, "end", w), f"{w}.end"),
                            _dur(_req(s, "extra", w), f"{w}.extra")))
    part = obj.get("partition")
    try:
        return ChannelModel(
            _dur(obj.get("base", 0), f"{where}.base"), jitter, tuple(spikes),
            FOREVER if part is None else _dur(part, f"{where}.partition", allow_forever=True),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


def _channel_to(m: ChannelModel) -> dict[str, Any]:
    out: dict[str, Any] = {"base": format_duration(m.base_latency)}
    if isinstance(m.jitter, Uniform):
        out["jitter"] = {"uniform": [format_duration(m.jitter.lo), format_duration(m.jitter.hi)]}
    elif isinstance(m.jitter, FixedTrace):
        out["jitter"] = {"trace": list(m.jitter.samples)}
    if m.spikes:
        out["spikes"] = [{"start": s.start, "end": s.end, "extra": s.extra} for s in m.spikes]
    if m.partitioned_from != FOREVER:
        out["partition"] = m.partitioned_from
    return out


def _reaction_from(obj: dict, where: str) -> ReactionSpec:
    body = _req(obj, "body", where)
    for key in ("body", "deadline_handler", "tardy_handler"):
        if obj.get(key) is not None:
            try:
                lookup_body(obj[key])
            except KeyError as exc:
                raise ConfigError(f"{where}.{key}", exc.args[0]) from None
    try:
        return ReactionSpec(
            name=_req(obj, "name", where), body=body, triggers=tuple(_req(obj, "triggers", where)),
            uses=tuple(obj.get("uses", ())), effects=tuple(obj.get("effects", ())),
            deadline=None if obj.get("deadline") is None else _dur(obj["deadline"], f"{where}.deadline"),
            deadline_handler=obj.get("deadline_handler"), tardy=obj.get("tardy", "none"),
            tardy_handler=obj.get("tardy_handler"),
            compute_time=_dur(obj.get("compute_time", 0), f"{where}.compute_time"),
            params=obj.get("params", {}),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


def _federate_from(obj: dict, where: str) -> FederateSpec:
    fid = _req(obj, "id", where)
    timers = []
    for i, t in enumerate(obj.get("timers", [])):
        w = f"{where}.timers[{i}]"
        period = t.get("period")
        timers.append(TimerSpec(_req(t, "name", w), _dur(t.get("offset", 0), f"{w}.offset"),
                                None if period is None else _dur(period, f"{w}.period")))
    actions = []
    for i, a in enumerate(obj.get("actions", [])):
        w = f"{where}.actions[{i}]"
        events = tuple((_dur(ev[0], f"{w}.events[{j}]"), ev[1]) for j, ev in enumerate(a.get("events", [])))
        try:
            actions.append(ActionSpec(_req(a, "name", w), events))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(w, str(exc)) from None
    reactions = [_reaction_from(r, f"{where}.reactions[{i}]") for i, r in enumerate(obj.get("reactions", []))]
    try:
        return FederateSpec(
            fid, tuple(obj.get("inputs", ())), tuple(obj.get("outputs", ())), reactions, timers, actions,
            obj.get("state", {}), _dur(obj.get("maxwait", 0), f"{where}.maxwait", allow_forever=True),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


def federation_from_dict(doc: dict) -> tuple[FederationSpec, Optional[Any]]:
    """Build a federation from a parsed document.

    Returns ``(spec, built_scenario_or_None)``.
    """
    if not isinstance(doc, dict):
        raise ConfigError("$", "top level must be an object")
    if "scenario" in doc:
        from . import scenarios

        built = scenarios.build(doc["scenario"], doc.get("params"))
        spec = built.spec
        if "seed" in doc:
            spec.seed = int(doc["seed"])
        return spec, built
    feds = [_federate_from(f, f"federates[{i}]") for i, f in enumerate(_req(doc, "federates", "$"))]
    conns = []
    for i, c in enumerate(doc.get("connections", [])):
        w = f"connections[{i}]"
        after = c.get("after")
        try:
            conns.append(ConnectionSpec(
                _req(c, "source", w), _req(c, "dest", w),
                None if after is None else _dur(after, f"{w}.after"),
                _dur(c.get("absent_after", 0), f"{w}.absent_after", allow_forever=True),
            ))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(w, str(exc)) from None
    channels = {cid: _channel_from(m, f"channels[{cid!r}]") for cid, m in doc.get("channels", {}).items()}
    clocks = {}
    for fid, c in doc.get("clocks", {}).items():
        w = f"clocks[{fid!r}]"
        bound = c.get("sync_bound")
        try:
            clocks[fid] = ClockModel(_dur(c.get("offset", 0), f"{w}.offset", signed=True),
                                     float(c.get("drift_ppm", 0)), c.get("mode", "simulated"),
                                     None if bound is None else _dur(bound, f"{w}.sync_bound"))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(w, str(exc)) from None
    try:
        spec = FederationSpec(
            doc.get("name", "federation"), feds, conns, channels,
            _channel_from(doc.get("default_channel", {}), "default_channel"), clocks,
            _dur(doc.get("duration", "10s"), "duration"), int(doc.get("seed", 0)), doc.get("metadata", {}),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("$", str(exc)) from None
    return spec, None


def load_federation(path: Union[str, Path]) -> tuple[FederationSpec, Optional[Any]]:
    path = str(path)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(path, exc.strerror or str(exc)) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from None
    try:
        return federation_from_dict(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc.where}", str(exc).split(": ", 1)[-1]) from None


def federation_to_dict(spec: FederationSpec) -> dict[str, Any]:
    """Serialize ``spec``; every body must be registered."""

    def reaction(r: ReactionSpec) -> dict[str, Any]:
        out = {"name": r.name, "body": body_name(r.body), "triggers": list(r.triggers)}
        if r.uses:
            out["uses"] = list(r.uses)
        if r.effects:
            out["effects"] = list(r.effects)
        if r.deadline is not None:
            out["deadline"] = r.deadline
            out["deadline_handler"] = body_name(r.deadline_handler)
        if r.tardy != "none":
            out["tardy"] = r.tardy
        if r.tardy_handler is not None:
            out["tardy_handler"] = body_name(r.tardy_handler)
        if r.compute_time:
            out["compute_time"] = r.compute_time
        if r.params:
            out["params"] = r.params
        return out

    feds = []
    for f in spec.federates:
        feds.append({
            "id": f.id, "maxwait": format_duration(f.maxwait), "inputs": list(f.inputs),
            "outputs": list(f.outputs), "state": f.state,
            "timers": [{"name": t.name, "offset": t.offset, "period": t.period} for t in f.timers],
            "actions": [{"name": a.name, "events": [list(e) for e in a.events]} for a in f.actions],
            "reactions": [reaction(r) for r in f.reactions],
        })
    conns = []
    for c in spec.connections:
        d: dict[str, Any] = {"source": c.source, "dest": c.dest}
        if c.after is not None:
            d["after"] = c.after
        if c.absent_after:
            d["absent_after"] = format_duration(c.absent_after)
        conns.append(d)
    return {
        "name": spec.name, "duration": spec.duration, "seed": spec.seed, "federates": feds,
        "connections": conns,
        "channels": {cid: _channel_to(m) for cid, m in spec.channels.items()},
        "default_channel": _channel_to(spec.default_channel),
        "clocks": {fid: {"offset": c.offset, "drift_ppm": c.drift_ppm, "mode": c.mode,
                         **({"sync_bound": c.sync_bound} if c.sync_bound is not None else {})}
                   for fid, c in spec.clocks.items()},
        "metadata": spec.metadata,
    }
