"""Catalog plumbing shared by the built-in scenarios."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from ..model import FederationSpec
from ..runtime import RunResult
from ..tags import ConfigurationError, FOREVER, format_duration, parse_duration

_KINDS = ("duration", "int", "float", "bool", "str", "json")


@dataclass(frozen=True)
class Param:
    """A tunable scenario parameter with its default and allowed range."""

    default: Any
    kind: str = "duration"
    doc: str = ""
    minimum: Optional[Any] = None
    choices: Optional[tuple] = None
    allow_forever: bool = False

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown parameter kind {self.kind!r}")

    def parse(self, name: str, raw: Any) -> Any:
        try:
            value = self._convert(raw)
        except (ValueError, TypeError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"parameter {name}: cannot read {raw!r} as {self.kind} ({exc})") from None
        if self.kind == "duration" and value == FOREVER and not self.allow_forever:
            raise ConfigurationError(f"parameter {name}: 'forever' is not allowed here")
        if self.minimum is not None and value < self.minimum:
            raise ConfigurationError(f"parameter {name}: {raw!r} is below the minimum {self.minimum!r}")
        if self.choices is not None and value not in self.choices:
            raise ConfigurationError(f"parameter {name}: {raw!r} is not one of {list(self.choices)}")
        return value

    def _convert(self, raw: Any) -> Any:
        if self.kind == "duration":
            return parse_duration(raw)
        if self.kind == "int":
            return int(raw)
        if self.kind == "float":
            return float(raw)
        if self.kind == "bool":
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected true or false")
        if self.kind == "json":
            return json.loads(raw) if isinstance(raw, str) else raw
        return str(raw)

    def show(self, value: Any) -> Any:
        if self.kind == "duration":
            return format_duration(value)
        return value


Check = Callable[[RunResult, dict], tuple[bool, Any]]


@dataclass(frozen=True)
class Expectation:
    name: str
    description: str
    check: Check


@dataclass
class ScenarioEntry:
    name: str
    summary: str
    params: dict[str, Param]
    builder: Callable[[dict], FederationSpec]
    expectations: list[Expectation] = field(default_factory=list)

    def resolve(self, overrides: Optional[dict[str, Any]] = None) -> dict[str, Any]:
        overrides = dict(overrides or {})
        unknown = sorted(set(overrides) - set(self.params))
        if unknown:
            raise ConfigurationError(
                f"scenario {self.name} has no parameter {unknown[0]!r}; known: {', '.join(sorted(self.params))}"
            )
        values = {}
        for key, p in self.params.items():
            values[key] = p.parse(key, overrides[key]) if key in overrides else p.default
        return values

    def build(self, overrides: Optional[dict[str, Any]] = None) -> "BuiltScenario":
        values = self.resolve(overrides)
        spec = self.builder(values)
        spec.metadata.setdefault("scenario", self.name)
        spec.metadata["params"] = {k: self.params[k].show(v) for k, v in values.items()}
        return BuiltScenario(self, values, spec)


@dataclass
class BuiltScenario:
    entry: ScenarioEntry
    params: dict[str, Any]
    spec: FederationSpec

    def evaluate(self, result: RunResult) -> list[dict[str, Any]]:
        """Run every expectation against ``result``."""
        out = []
        for exp in self.entry.expectations:
            try:
                ok, detail = exp.check(result, self.params)
            except Exception as exc:  # a broken expectation is a failed one
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            out.append({"name": exp.name, "passed": bool(ok), "detail": detail})
        return out


CATALOG: dict[str, ScenarioEntry] = {}


def register(entry: ScenarioEntry) -> ScenarioEntry:
    if entry.name in CATALOG:
        raise ValueError(f"scenario {entry.name} registered twice")
    CATALOG[entry.name] = entry
    return entry


# --- helpers for expectation code -------------------------------------------

def reactions(result: RunResult, fed: str, name: Optional[str] = None) -> list:
    return [e for e in result.trace.of(fed, "reaction")
            if name is None or e.detail.get("reaction") == name]


def notes(event) -> dict[str, Any]:
    return event.detail.get("notes", {})


def tardy_count(result: RunResult, fed: str) -> int:
    return len(result.trace.of(fed, "tardy"))


def clean_status(result: RunResult, _params: dict) -> tuple[bool, Any]:
    return result.status == "ok", result.status
