"""Built-in scenarios: one federation per worked coordination pattern.

>>> from maxwait.scenarios import build
>>> built = build("rpc_futures", {"worker2_delay": "150ms"})
>>> built.spec.name
'rpc_futures'
"""

from __future__ import annotations

from typing import Any, Optional

from ..tags import ConfigurationError
from . import aeb, bank, door, let, pubsub, rpc  # noqa: F401  (registers entries)
from .common import CATALOG, BuiltScenario, Expectation, Param, ScenarioEntry


def names() -> list[str]:
    return sorted(CATALOG)


def get(name: str) -> ScenarioEntry:
    try:
        return CATALOG[name]
    except KeyError:
        raise ConfigurationError(f"unknown scenario {name!r}; choose from {', '.join(names())}") from None


def build(name: str, params: Optional[dict[str, Any]] = None) -> BuiltScenario:
    return get(name).build(params)


__all__ = ["BuiltScenario", "CATALOG", "Expectation", "Param", "ScenarioEntry", "build", "get", "names"]
