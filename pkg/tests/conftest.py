"""Shared helpers: small registered bodies, a fake host and tiny federations."""

from __future__ import annotations

from typing import Any, Optional

import pytest

from maxwait.model import (
    ConnectionSpec, FederateSpec, FederationSpec, ReactionSpec, TimerSpec, reaction_body,
)
from maxwait.netsim import ChannelModel
from maxwait.tags import MSEC, Tag


# --- acceptance criteria bookkeeping ---------------------------------------

_CRITERIA: dict[int, list[tuple[str, bool]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): test belongs to acceptance criterion n")


def pytest_runtest_logreport(report):
    marker = report.criterion if hasattr(report, "criterion") else None
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _CRITERIA.setdefault(marker, []).append((report.nodeid, report.passed))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _CRITERIA[n]
        failed = [nid.split("::", 1)[-1] for nid, ok in results if not ok]
        line = f"criterion {n}: {'FAIL' if failed else 'PASS'} ({len(results) - len(failed)}/{len(results)} tests)"
        if failed:
            line += " failing: " + ", ".join(failed)
        terminalreporter.write_line(line)


@reaction_body("test.emit")
def emit(ctx):
    ctx.set(ctx.params.get("port", "out"), ctx.params.get("value", ctx.tag.time))


@reaction_body("test.log")
def log_inputs(ctx):
    ctx.state["log"].append([str(ctx.tag), ctx.present_names, ctx.tardy])
    if ctx.tardy:
        ctx.note(intended=str(ctx.intended_tag))


@reaction_body("test.handler")
def handler(ctx):
    ctx.state["handled"].append(str(ctx.intended_tag))


@reaction_body("test.late")
def late(ctx):
    ctx.state["late"] += 1


@reaction_body("test.boom")
def boom(ctx):
    ctx.state["log"].append("never committed")
    raise RuntimeError("boom")


@reaction_body("test.set_maxwait")
def set_maxwait(ctx):
    if ctx.tag.time == ctx.params["at"]:
        ctx.set_maxwait(ctx.params["maxwait"])


class FakeHost:
    """Records everything a federate asks of its host."""

    def __init__(self):
        self.events: list[dict[str, Any]] = []
        self.sent: list[tuple] = []
        self.wakeups: list[tuple[str, Any]] = []
        self.closed: list[str] = []

    def emit(self, fed, port, tag, value, ref_now):
        self.sent.append((fed, port, tag, value, ref_now))

    def close_outputs(self, fed, ref_now):
        self.closed.append(fed)

    def request_wakeup(self, fed, ref_time):
        self.wakeups.append((fed, ref_time))

    def record(self, fed, kind, ref_now, local, tag=None, port=None, detail=None, state=None):
        self.events.append({"fed": fed, "kind": kind, "ref": ref_now, "local": local, "tag": tag,
                            "port": port, "detail": detail or {}, "state": state})

    def kinds(self, kind):
        return [e for e in self.events if e["kind"] == kind]


@pytest.fixture
def host():
    return FakeHost()


def pipeline(receiver_reactions, *, maxwait=0, period=100 * MSEC, latency=10 * MSEC,
             receiver_timers=(), duration=500 * MSEC, receiver_state=None, absent_after=0,
             channel: Optional[ChannelModel] = None, receiver_inputs=("inp",),
             source_offset=0) -> FederationSpec:
    """A timer-driven source feeding one receiver port ``inp``."""
    src = FederateSpec("src", outputs=("out",), timers=[TimerSpec("t", source_offset, period)],
                       reactions=[ReactionSpec("emit", "test.emit", ("t",), effects=("out",))])
    dst = FederateSpec("dst", inputs=tuple(receiver_inputs), maxwait=maxwait, timers=list(receiver_timers),
                       state=receiver_state if receiver_state is not None else {"log": []},
                       reactions=list(receiver_reactions))
    conn = ConnectionSpec("src.out", "dst.inp", absent_after=absent_after)
    channels = {conn.id: channel} if channel is not None else {}
    return FederationSpec("pipeline", [src, dst], [conn], channels=channels,
                          default_channel=ChannelModel(latency), duration=duration)


def tag_strings(tags):
    return [str(t) if isinstance(t, Tag) else t for t in tags]
