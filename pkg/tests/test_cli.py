import json
import os
import subprocess
import sys

import pytest

from maxwait.cli import main
from maxwait.netsim import Channel, InFlightMessage
from maxwait.tags import MSEC

DOUBLE_SEND = {
    "name": "double",
    "duration": "200ms",
    "federates": [
        {"id": "src", "outputs": ["out"], "timers": [{"name": "t", "offset": 0, "period": "100ms"}],
         "reactions": [
             {"name": "a", "body": "test.emit", "triggers": ["t"], "effects": ["out"]},
             {"name": "b", "body": "test.emit", "triggers": ["t"], "effects": ["out"]},
         ]},
        {"id": "dst", "inputs": ["inp"], "state": {"log": []},
         "reactions": [{"name": "rx", "body": "test.log", "triggers": ["inp"]}]},
    ],
    "connections": [{"source": "src.out", "dest": "dst.inp"}],
}


def cli(capsys, *argv):
    try:
        code = main(list(argv))
    except SystemExit as exc:  # argparse rejects some usage errors itself
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


def cli_json(capsys, *argv):
    code, out, _ = cli(capsys, *argv, "--json")
    return code, json.loads(out)


class TestRun:
    def test_ok(self, capsys):
        code, out, _ = cli(capsys, "run", "--scenario", "bank_acid", "--seed", "1", "--duration", "30s")
        assert code == 0
        assert out.startswith("bank_acid: ok (seed 1, virtual, ended at 30")
        assert "ok   eventual_consistency" in out

    def test_json_summary(self, capsys):
        code, data = cli_json(capsys, "run", "--scenario", "rpc_futures")
        assert code == 0 and data["status"] == "ok" and data["exit_code"] == 0
        assert {e["name"] for e in data["expectations"]} == {"clean_run", "results", "futures_block"}
        c = data["counts"]
        assert c["sent"] == c["delivered"] + c["partitioned"]

    def test_params(self, capsys):
        code, data = cli_json(capsys, "run", "--scenario", "rpc_futures", "--param", "worker2_delay=150ms")
        assert code == 0
        results = next(e for e in data["expectations"] if e["name"] == "results")
        assert results["detail"]["results"] == [0, 0, 0, 0, 0]

    def test_stall(self, capsys):
        code, out, _ = cli(capsys, "run", "--scenario", "aircraft_door", "--partition", "camera.ramp_present@0")
        assert code == 3
        assert "STALL door at 1.000000000@0: waiting on disarm" in out

    def test_expectation_failure(self, capsys):
        code, out, _ = cli(capsys, "run", "--scenario", "aircraft_door", "--param", "door_maxwait=0")
        assert code == 5
        assert "FAIL no_slide_with_ramp" in out

    def test_no_expect(self, capsys):
        code, data = cli_json(capsys, "run", "--scenario", "aircraft_door", "--param", "door_maxwait=0",
                              "--no-expect")
        assert code == 0 and data["expectations"] == []

    def test_transport_fault(self, capsys, monkeypatch):
        def reorder(self, tag, payload, now, src_tag=None):
            self.last_tag = tag
            self.sent += 1
            lat = 50 * MSEC if tag.time == 0 else MSEC
            return InFlightMessage(tag, payload, self.id, now, now + lat, src_tag, self.sent)

        monkeypatch.setattr(Channel, "send", reorder)
        code, out, _ = cli(capsys, "run", "--scenario", "aircraft_door", "--param", "commands=[[0,true],[1000,false]]")
        assert code == 4 and "FAULT" in out

    def test_scenario_error(self, capsys, tmp_path):
        path = tmp_path / "double.json"
        path.write_text(json.dumps(DOUBLE_SEND))
        code, out, _ = cli(capsys, "run", "--config", str(path))
        assert code == 7 and "not after" in out

    def test_config_scenario_reference(self, capsys, tmp_path):
        path = tmp_path / "ref.json"
        path.write_text(json.dumps({"scenario": "let_pattern", "params": {"compute_time": "90ms"}}))
        code, data = cli_json(capsys, "run", "--config", str(path))
        assert code == 0 and data["federation"] == "let_pattern"

    def test_seed_from_environment(self, capsys, monkeypatch):
        monkeypatch.setenv("MAXWAIT_SEED", "17")
        _, data = cli_json(capsys, "run", "--scenario", "aeb")
        assert data["seed"] == 17
        _, data = cli_json(capsys, "run", "--scenario", "aeb", "--seed", "3")
        assert data["seed"] == 3

    def test_config_seed_precedence(self, capsys, monkeypatch, tmp_path):
        path = tmp_path / "ref.json"
        path.write_text(json.dumps({"scenario": "bank_acid", "seed": 9}))
        monkeypatch.delenv("MAXWAIT_SEED", raising=False)
        assert cli_json(capsys, "run", "--config", str(path))[1]["seed"] == 9
        monkeypatch.setenv("MAXWAIT_SEED", "17")
        assert cli_json(capsys, "run", "--config", str(path))[1]["seed"] == 17
        assert cli_json(capsys, "run", "--config", str(path), "--seed", "3")[1]["seed"] == 3

    def test_overrides_recorded_in_trace(self, capsys, tmp_path):
        path = tmp_path / "t.jsonl"
        cli(capsys, "run", "--scenario", "aeb", "--jitter", "*=0:2ms", "--clock-offset", "detector=-1ms",
            "--drift", "radar=20", "--latency", "radar.rad=7ms", "--spike", "lidar.lid@0:1s+1ms",
            "--trace", str(path))
        meta = json.loads(path.read_text().splitlines()[0])
        assert meta["overrides"]["clock_offsets"] == {"detector": "-1ms"}
        assert meta["overrides"]["drift_ppm"] == {"radar": 20.0}

    def test_byte_identical_traces(self, capsys, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for p in (a, b):
            cli(capsys, "run", "--scenario", "pubsub_actors", "--seed", "5", "--trace", str(p))
        assert a.read_bytes() == b.read_bytes()

    def test_realtime_mode(self, capsys):
        code, data = cli_json(capsys, "run", "--scenario", "rpc_futures", "--mode", "realtime", "--speed", "8",
                              "--duration", "1s")
        assert code == 0 and data["mode"] == "realtime" and data["expectations"] == []


class TestUsageErrors:
    @pytest.mark.parametrize("argv", [
        ["run"],
        ["run", "--scenario", "aeb", "--config", "x.json"],
        ["run", "--scenario", "nope"],
        ["run", "--scenario", "aeb", "--param", "latency"],
        ["run", "--scenario", "aeb", "--param", "latency=soon"],
        ["run", "--scenario", "aeb", "--jitter", "*=5ms"],
        ["run", "--scenario", "aeb", "--latency", "ghost.out=5ms"],
        ["check", "missing.jsonl"],
        ["check", "--checks", "strong", "missing.jsonl"],
    ])
    def test_exit_2(self, capsys, argv):
        code, _, err = cli(capsys, *argv)
        assert code == 2 and "error" in err

    def test_bad_seed_variable(self, capsys, monkeypatch):
        monkeypatch.setenv("MAXWAIT_SEED", "abc")
        code, _, err = cli(capsys, "run", "--scenario", "aeb")
        assert code == 2 and "MAXWAIT_SEED" in err

    def test_config_syntax_error(self, capsys, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{\n  \"federates\": [\n")
        code, _, err = cli(capsys, "run", "--config", str(path))
        assert code == 2 and f"{path}:3:" in err

    def test_malformed_trace(self, capsys, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"kind": "meta"}\nnot json\n{"kind": "end"}\n')
        code, _, err = cli(capsys, "check", str(path))
        assert code == 2 and ":2:" in err


@pytest.fixture
def traces(tmp_path, capsys):
    """Traces written by the run command: a consistent and a diverging bank."""
    good = tmp_path / "good.jsonl"
    cli(capsys, "run", "--scenario", "bank_conservative", "--trace", str(good))
    bad = tmp_path / "bad.jsonl"
    for seed in range(50):
        cli(capsys, "run", "--scenario", "bank_acid", "--param", "reducer=penalty", "--param",
            "deposits=[20, 40, -50]", "--jitter", "*=0:40ms", "--seed", str(seed), "--trace", str(bad))
        code, _, _ = cli(capsys, "check", str(bad), "--checks", "eventual")
        if code == 1:
            break
    return good, bad


class TestCheck:
    def test_pass(self, capsys, traces):
        code, out, _ = cli(capsys, "check", str(traces[0]))
        assert code == 0 and out.strip().endswith("overall: PASS")

    def test_fail(self, capsys, traces):
        code, data = cli_json(capsys, "check", str(traces[1]), "--group", "a1,a2")
        assert code == 1 and data["overall"] == "FAIL"
        logical = next(v for v in data["verdicts"] if v["check"] == "logical_time_consistency")
        assert logical["divergence"]["tag"]

    def test_truncated_is_inconclusive(self, capsys, traces, tmp_path):
        text = traces[0].read_text()
        cut = tmp_path / "cut.jsonl"
        cut.write_text(text[: len(text) // 2])
        code, out, _ = cli(capsys, "check", str(cut))
        assert code == 6
        assert "cut off" in out and "overall: INCONCLUSIVE" in out

    def test_missing_end_record_is_inconclusive(self, capsys, traces, tmp_path):
        lines = traces[0].read_text().splitlines(keepends=True)
        cut = tmp_path / "noend.jsonl"
        cut.write_text("".join(lines[:-1]))
        code, _, _ = cli(capsys, "check", str(cut))
        assert code == 6

    def test_replicas(self, capsys, tmp_path):
        paths = []
        for seed, off in ((1, "2ms"), (2, "-4ms")):
            p = tmp_path / f"door{seed}.jsonl"
            cli(capsys, "run", "--scenario", "aircraft_door", "--seed", str(seed), "--jitter", "*=0:20ms",
                "--clock-offset", f"door={off}", "--trace", str(p))
            paths.append(str(p))
        code, out, _ = cli(capsys, "check", *paths, "--replicas", "door")
        assert code == 0 and "PASS         replica_consistency" in out

    def test_no_groups(self, capsys, tmp_path):
        p = tmp_path / "pubsub.jsonl"
        cli(capsys, "run", "--scenario", "pubsub_actors", "--trace", str(p))
        code, out, _ = cli(capsys, "check", str(p))
        assert code == 0 and "no groups" in out


class TestReport:
    def test_text(self, capsys, traces):
        code, out, _ = cli(capsys, "report", str(traces[0]))
        assert code == 0
        assert "balanced: True" in out and "a1" in out and "absence detection" in out

    def test_json_availability(self, capsys, tmp_path):
        p = tmp_path / "opt.jsonl"
        cli(capsys, "run", "--scenario", "bank_optimistic", "--trace", str(p))
        code, data = cli_json(capsys, "report", str(p))
        assert code == 0
        assert data["availability"]["latency"]["max"] <= 30 * MSEC
        assert data["federates"]["am1"]["maxwait"] == "30ms"

    def test_stalled_run(self, capsys, tmp_path):
        p = tmp_path / "stall.jsonl"
        cli(capsys, "run", "--scenario", "aircraft_door", "--partition", "camera.ramp_present@0", "--trace", str(p))
        code, data = cli_json(capsys, "report", str(p))
        assert data["status"] == "stall" and data["stalls"][0]["federate"] == "door"


class TestListScenarios:
    def test_text(self, capsys):
        code, out, _ = cli(capsys, "list-scenarios")
        assert code == 0 and len(out.strip().splitlines()) == 8

    def test_verbose(self, capsys):
        _, out, _ = cli(capsys, "list-scenarios", "-v")
        assert '    absent_after = "100ms"' in out

    def test_json(self, capsys):
        _, rows = cli_json(capsys, "list-scenarios")
        door = next(r for r in rows if r["name"] == "aircraft_door")
        assert door["params"]["door_maxwait"]["default"] == "forever"


class TestEntryPoints:
    def test_module(self):
        proc = subprocess.run([sys.executable, "-m", "maxwait", "list-scenarios"], capture_output=True, text=True)
        assert proc.returncode == 0 and "bank_acid" in proc.stdout

    def test_script_exit_code(self, tmp_path):
        env = {**os.environ, "MAXWAIT_SEED": "2"}
        proc = subprocess.run(["maxwait", "run", "--scenario", "aircraft_door", "--partition",
                               "camera.ramp_present@0", "--json"], capture_output=True, text=True, env=env)
        assert proc.returncode == 3
        assert json.loads(proc.stdout)["seed"] == 2
