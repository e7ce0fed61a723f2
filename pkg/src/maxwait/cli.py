"""Command-line entry point.

Subcommands::

    maxwait run --scenario bank_acid --seed 1 --duration 30s --trace out.jsonl
    maxwait check out.jsonl --group a1,a2
    maxwait report out.jsonl
    maxwait list-scenarios

Exit codes are stable:

==  =========================================================
0   success (clean quiescence, every verdict PASS)
1   ``check``: at least one FAIL verdict
2   usage or configuration error (bad flags, bad files)
3   ``run``: stall or deadlock (some federate never finished)
4   ``run``: transport fault (in-order delivery violated)
5   ``run``: a scenario expectation failed
6   ``check``: no FAIL, but at least one INCONCLUSIVE verdict
7   ``run``: scenario error (e.g. non-increasing tags on a channel)
==  =========================================================

``MAXWAIT_SEED`` sets the default seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Any, Optional, Sequence

from . import __version__, scenarios
from .checker import FAIL, INCONCLUSIVE, PASS, availability_report, check_replicas, check_trace, message_accounting
from .config import (
    ConfigError, Overrides, load_federation, parse_assignment, parse_jitter, parse_latency,
    parse_partition, parse_spike,
)
from .runtime import STATUS_OK, STATUS_SCENARIO_ERROR, STATUS_STALL, STATUS_TRANSPORT_FAULT, run_federation
from .tags import ConfigurationError, format_duration, parse_duration
from .trace import TraceFormatError, read_trace

EXIT_OK = 0
EXIT_CHECK_FAIL = 1
EXIT_USAGE = 2
EXIT_STALL = 3
EXIT_TRANSPORT_FAULT = 4
EXIT_EXPECTATION = 5
EXIT_INCONCLUSIVE = 6
EXIT_SCENARIO_ERROR = 7

_STATUS_EXIT = {
    STATUS_OK: EXIT_OK,
    STATUS_STALL: EXIT_STALL,
    STATUS_TRANSPORT_FAULT: EXIT_TRANSPORT_FAULT,
    STATUS_SCENARIO_ERROR: EXIT_SCENARIO_ERROR,
}


class UsageError(Exception):
    pass


def _default_seed(fallback: int = 0) -> int:
    raw = os.environ.get("MAXWAIT_SEED")
    if raw is None or raw == "":
        return fallback
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"MAXWAIT_SEED={raw!r} is not an integer") from None


def _emit(payload: Any, as_json: bool, text: str) -> None:
    if as_json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text)


# --- run ----------------------------------------------------------------------

def _params(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--param {item!r}: expected NAME=VALUE")
        out[key.strip()] = value.strip()
    return out


def _overrides(args: argparse.Namespace) -> Overrides:
    return Overrides(
        latency=[parse_latency(x) for x in args.latency],
        jitter=[parse_jitter(x) for x in args.jitter],
        spikes=[parse_spike(x) for x in args.spike],
        partitions=[parse_partition(x) for x in args.partition],
        clock_offsets=dict(parse_assignment(x) for x in args.clock_offset),
        drift_ppm=dict(parse_assignment(x, duration=False) for x in args.drift),
    )


def cmd_run(args: argparse.Namespace) -> int:
    if bool(args.scenario) == bool(args.config):
        raise UsageError("give exactly one of --scenario or --config")
    overrides = _overrides(args)
    built = None
    if args.scenario:
        params = _params(args.param)
        entry = scenarios.get(args.scenario)
        if args.duration is not None:
            if "duration" in entry.params:
                params["duration"] = args.duration
            else:
                overrides.duration = int(parse_duration(args.duration))
        built = entry.build(params)
        spec = built.spec
    else:
        if args.param:
            raise UsageError("--param only applies to --scenario")
        spec, built = load_federation(args.config)
        if args.duration is not None:
            overrides.duration = int(parse_duration(args.duration))
    spec = overrides.apply(spec)
    # --seed, then $MAXWAIT_SEED, then the seed recorded in a config file
    seed = _default_seed(spec.seed if args.config else 0) if args.seed is None else args.seed
    spec.seed = seed
    if args.mode == "realtime":
        from .realtime import run_realtime

        result = run_realtime(spec, seed, speed=args.speed)
    else:
        result = run_federation(spec, seed)
    if args.trace:
        result.trace.write(args.trace)

    expectations = []
    if built is not None and not args.no_expect and args.mode == "virtual":
        expectations = built.evaluate(result)
    failed = [e["name"] for e in expectations if not e["passed"]]
    code = _STATUS_EXIT[result.status]
    if code == EXIT_OK and failed:
        code = EXIT_EXPECTATION

    summary = {
        "federation": spec.name,
        "seed": seed,
        "mode": args.mode,
        "status": result.status,
        "exit_code": code,
        "final_time": result.final_time,
        "counts": result.counts,
        "stalls": result.stalls,
        "fault": result.fault,
        "expectations": expectations,
        "trace": args.trace,
    }
    lines = [f"{spec.name}: {result.status} (seed {seed}, {args.mode}, ended at {format_duration(result.final_time)})"]
    c = result.counts
    lines.append(f"  messages: sent {c['sent']}, delivered {c['delivered']}, partitioned {c['partitioned']}, "
                 f"tardy {c['tardy']}, deadline violations {c['deadline_violations']}, "
                 f"absent assumed {c['absent_assumed']}")
    for s in result.stalls:
        ports = s.get("unknown_ports") or s.get("unresolved_ports") or []
        lines.append(f"  STALL {s['federate']} at {s['tag']}: waiting on {', '.join(ports) or '(nothing)'}")
    if result.fault:
        lines.append(f"  FAULT {result.fault}")
    for e in expectations:
        lines.append(f"  {'ok  ' if e['passed'] else 'FAIL'} {e['name']}: {json.dumps(e['detail'], sort_keys=True)}")
    if args.trace:
        lines.append(f"  trace written to {args.trace}")
    _emit(summary, args.json, "\n".join(lines))
    return code


# --- check ----------------------------------------------------------------------

def _groups(items: Sequence[str]) -> Optional[list[list[str]]]:
    if not items:
        return None
    return [[f.strip() for f in g.split(",") if f.strip()] for g in items]


def cmd_check(args: argparse.Namespace) -> int:
    traces = [read_trace(p) for p in args.traces]
    checks = [c.strip() for c in args.checks.split(",") if c.strip()]
    bad = sorted(set(checks) - {"logical", "eventual"})
    if bad:
        raise UsageError(f"unknown check {bad[0]!r}; use logical and/or eventual")
    groups = _groups(args.group)
    reports = [check_trace(tr, groups, checks) for tr in traces]
    verdicts = [v for r in reports for v in r["verdicts"]]
    for fed in args.replicas:
        verdicts.append(check_replicas(traces, fed).to_dict())
    for r in reports:
        if not r["counts"]["balanced"] and not r["truncated"]:
            verdicts.append({"check": "message_accounting", "verdict": FAIL, "group": [],
                             "reason": f"{r['source']}: sent/delivered/classified counts do not balance"})
        if r["fifo_violations"]:
            verdicts.append({"check": "fifo", "verdict": FAIL, "group": r["fifo_violations"],
                             "reason": f"{r['source']}: out-of-order delivery"})
    kinds = {v["verdict"] for v in verdicts}
    if FAIL in kinds:
        overall, code = FAIL, EXIT_CHECK_FAIL
    elif INCONCLUSIVE in kinds:
        overall, code = INCONCLUSIVE, EXIT_INCONCLUSIVE
    else:
        overall, code = PASS, EXIT_OK
    payload = {"overall": overall, "exit_code": code, "verdicts": verdicts, "traces": reports}
    lines = []
    for r in reports:
        if r.get("diagnostic"):
            lines.append(f"{r['source']}: {r['diagnostic']}")
    for v in verdicts:
        reason = f" ({v['reason']})" if v.get("reason") else ""
        lines.append(f"{v['verdict']:<12} {v['check']} [{', '.join(v['group'])}]{reason}")
    if not verdicts:
        lines.append("no groups to check (pass --group or --replicas)")
    lines.append(f"overall: {overall}")
    _emit(payload, args.json, "\n".join(lines))
    return code


# --- report ---------------------------------------------------------------------

def _fmt_summary(s: dict[str, Any]) -> str:
    if not s.get("n"):
        return "none"
    return (f"n={s['n']} min={format_duration(s['min'])} p50={format_duration(int(s['p50']))} "
            f"max={format_duration(s['max'])}")


def cmd_report(args: argparse.Namespace) -> int:
    trace = read_trace(args.trace)
    meta, end = trace.meta, trace.end or {}
    acc = message_accounting(trace)
    avail_cfg = meta.get("availability") or {}
    avail = availability_report(trace, avail_cfg.get("pairs", []), avail_cfg.get("staleness_key"))
    per_fed = {}
    for fid in sorted(meta.get("federates", {})):
        evs = trace.of(fid)
        per_fed[fid] = {
            "maxwait": meta["federates"][fid].get("maxwait"),
            "advances": sum(1 for e in evs if e.kind == "advance"),
            "reactions": sum(1 for e in evs if e.kind == "reaction"),
            "tardy": sum(1 for e in evs if e.kind == "tardy"),
            "deadline_violations": sum(1 for e in evs if e.kind == "deadline_violation"),
            "absent_assumed": sum(1 for e in evs if e.kind == "absent_assumed"),
            "faults": sum(1 for e in evs if e.kind == "fault"),
            "advanced_by_maxwait": sum(1 for e in evs if e.kind == "advance" and e.detail.get("via") == "maxwait"),
        }
    payload = {
        "federation": meta.get("federation"),
        "scenario": meta.get("scenario"),
        "seed": meta.get("seed"),
        "status": end.get("status", "truncated"),
        "accounting": acc,
        "federates": per_fed,
        "availability": avail,
        "stalls": end.get("stalls", []),
    }
    lines = [f"{meta.get('federation')} (seed {meta.get('seed')}): {payload['status']}",
             f"  sent {acc['sent']} = delivered {acc['delivered']} + partitioned {acc['partitioned']}; "
             f"delivered = normal {acc['normal']} + tardy {acc['tardy']}; balanced: {acc['balanced']}"]
    for fid, row in per_fed.items():
        lines.append(f"  {fid:<12} maxwait {row['maxwait']:<8} advances {row['advances']:<5} "
                     f"reactions {row['reactions']:<5} tardy {row['tardy']:<4} "
                     f"deadline {row['deadline_violations']:<3} absent {row['absent_assumed']}")
    if avail_cfg:
        lines.append(f"  response latency: {_fmt_summary(avail['latency'])}; unavailable: {avail['unavailable']}")
        if "staleness" in avail:
            lines.append(f"  staleness: {_fmt_summary(avail['staleness'])}")
    lines.append(f"  absence detection: {_fmt_summary(avail['absence_detection']['latency'])}")
    for s in payload["stalls"]:
        lines.append(f"  STALL {s['federate']} at {s['tag']}")
    _emit(payload, args.json, "\n".join(lines))
    return EXIT_OK


# --- list-scenarios ------------------------------------------------------------

def cmd_list(args: argparse.Namespace) -> int:
    rows = []
    for name in scenarios.names():
        entry = scenarios.get(name)
        rows.append({
            "name": name,
            "summary": entry.summary,
            "params": {k: {"default": p.show(p.default), "kind": p.kind, "doc": p.doc}
                       for k, p in sorted(entry.params.items())},
            "expectations": [e.name for e in entry.expectations],
        })
    lines = []
    for r in rows:
        lines.append(f"{r['name']}: {r['summary']}")
        if args.verbose:
            for k, p in r["params"].items():
                lines.append(f"    {k} = {json.dumps(p['default'])}  ({p['doc']})")
    _emit(rows, args.json, "\n".join(lines))
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxwait", description="Run and check maxwait-coordinated federations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a federation and write its trace")
    src = run.add_mutually_exclusive_group()
    src.add_argument("--scenario", help="catalog scenario name (see list-scenarios)")
    src.add_argument("--config", help="federation JSON file")
    run.add_argument("--param", action="append", default=[], metavar="NAME=VALUE", help="scenario parameter")
    run.add_argument("--seed", type=int, default=None, help="RNG seed (default: $MAXWAIT_SEED, else the config seed, else 0)")
    run.add_argument("--duration", help="run length, e.g. 30s")
    run.add_argument("--mode", choices=("virtual", "realtime"), default="virtual")
    run.add_argument("--speed", type=float, default=1.0, help="realtime clock speed-up factor")
    run.add_argument("--latency", action="append", default=[], metavar="SEL=DUR", help="base latency")
    run.add_argument("--jitter", action="append", default=[], metavar="SEL=LO:HI", help="uniform jitter")
    run.add_argument("--spike", action="append", default=[], metavar="SEL@START:END+EXTRA",
                     help="extra latency for messages sent in [START, END]")
    run.add_argument("--partition", action="append", default=[], metavar="SEL@TIME",
                     help="drop every message sent at or after TIME")
    run.add_argument("--clock-offset", action="append", default=[], metavar="FED=DUR", help="clock offset")
    run.add_argument("--drift", action="append", default=[], metavar="FED=PPM", help="clock drift")
    run.add_argument("--trace", help="write the trace to this path")
    run.add_argument("--no-expect", action="store_true", help="skip scenario expectations")
    run.add_argument("--json", action="store_true", help="machine-readable output")
    run.set_defaults(func=cmd_run)

    check = sub.add_parser("check", help="check consistency verdicts on traces")
    check.add_argument("traces", nargs="+")
    check.add_argument("--group", action="append", default=[], metavar="FED,FED,...",
                       help="replica group within each trace (default: groups recorded in the trace)")
    check.add_argument("--checks", default="logical,eventual", help="comma list of logical, eventual")
    check.add_argument("--replicas", action="append", default=[], metavar="FED",
                       help="compare FED across all given traces")
    check.add_argument("--json", action="store_true")
    check.set_defaults(func=cmd_check)

    report = sub.add_parser("report", help="summarize a trace")
    report.add_argument("trace")
    report.add_argument("--json", action="store_true")
    report.set_defaults(func=cmd_report)

    ls = sub.add_parser("list-scenarios", help="list catalog scenarios")
    ls.add_argument("-v", "--verbose", action="store_true", help="show parameters")
    ls.add_argument("--json", action="store_true")
    ls.set_defaults(func=cmd_list)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ConfigurationError, TraceFormatError) as exc:
        print(f"maxwait {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"maxwait {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
