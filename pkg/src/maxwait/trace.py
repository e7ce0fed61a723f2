"""Trace records and their line-delimited JSON form.

A trace file starts with one ``meta`` record, holds one record per
:class:`TraceEvent`, and ends with an ``end`` record.  A file without the
``end`` record is treated as truncated.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, TextIO, Union

from .tags import Tag, format_tag, parse_tag

DIGEST_ALGORITHM = "sha256/16"

EVENT_KINDS = (
    "advance", "reaction", "tardy", "deadline_violation", "absent_assumed",
    "deliver", "send", "stall", "fault", "close",
)


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest(value: Any) -> str:
    """Stable short hash of a JSON-serializable value."""
    return hashlib.sha256(canonical_json(value).encode()).hexdigest()[:16]


@dataclass
class TraceEvent:
    seq: int
    reference_time: int
    local_time: int
    federate: str
    kind: str
    tag: Optional[Tag] = None
    port: Optional[str] = None
    state_digest: Optional[str] = None
    detail: dict[str, Any] = field(default_factory=dict)

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "seq": self.seq,
            "ref": self.reference_time,
            "local": self.local_time,
            "fed": self.federate,
            "kind": self.kind,
            "tag": format_tag(self.tag) if self.tag is not None else None,
        }
        if self.port is not None:
            rec["port"] = self.port
        if self.state_digest is not None:
            rec["state"] = self.state_digest
        if self.detail:
            rec["detail"] = self.detail
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "TraceEvent":
        tag = rec.get("tag")
        return cls(
            seq=int(rec["seq"]),
            reference_time=int(rec["ref"]),
            local_time=int(rec["local"]),
            federate=str(rec["fed"]),
            kind=str(rec["kind"]),
            tag=parse_tag(tag) if tag is not None else None,
            port=rec.get("port"),
            state_digest=rec.get("state"),
            detail=rec.get("detail", {}),
        )


class TraceFormatError(ValueError):
    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


@dataclass
class Trace:
    meta: dict[str, Any]
    events: list[TraceEvent]
    end: Optional[dict[str, Any]]
    source: str = "<memory>"
    partial_line: Optional[int] = None

    @property
    def truncated(self) -> bool:
        return self.end is None

    def of(self, federate: str, kind: Optional[str] = None) -> list[TraceEvent]:
        return [e for e in self.events
                if e.federate == federate and (kind is None or e.kind == kind)]

    def kind(self, kind: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == kind]

    def lines(self) -> Iterable[str]:
        yield canonical_json({"kind": "meta", **self.meta})
        for e in self.events:
            yield canonical_json(e.to_record())
        if self.end is not None:
            yield canonical_json({"kind": "end", **self.end})

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, out: Union[str, Path, TextIO]) -> None:
        if isinstance(out, (str, Path)):
            with open(out, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(self.dumps())
        else:
            out.write(self.dumps())


def read_trace(path: Union[str, Path]) -> Trace:
    """Parse a trace file, reporting malformed lines with their number."""
    path = str(path)
    meta: Optional[dict[str, Any]] = None
    end: Optional[dict[str, Any]] = None
    events: list[TraceEvent] = []
    partial: Optional[int] = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if end is not None:
                raise TraceFormatError(path, lineno, "record after end marker")
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                if not line.endswith("\n") and meta is not None:
                    # the writer was cut off mid-record: keep what is complete
                    partial = lineno
                    break
                raise TraceFormatError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "kind" not in rec:
                raise TraceFormatError(path, lineno, "record is not an object with a 'kind'")
            kind = rec["kind"]
            if kind == "meta":
                if meta is not None or events:
                    raise TraceFormatError(path, lineno, "meta record must come first")
                meta = {k: v for k, v in rec.items() if k != "kind"}
                continue
            if kind == "end":
                end = {k: v for k, v in rec.items() if k != "kind"}
                continue
            if kind not in EVENT_KINDS:
                raise TraceFormatError(path, lineno, f"unknown event kind {kind!r}")
            try:
                events.append(TraceEvent.from_record(rec))
            except (KeyError, ValueError, TypeError) as exc:
                raise TraceFormatError(path, lineno, f"bad event record: {exc}") from None
    if meta is None:
        raise TraceFormatError(path, 1, "missing meta record")
    return Trace(meta, events, end, source=path, partial_line=partial)
