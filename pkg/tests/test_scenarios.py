import pytest

from maxwait.config import Overrides
from maxwait.runtime import run_federation
from maxwait.scenarios import build, get, names
from maxwait.scenarios.bank import request_schedule, response_latencies
from maxwait.scenarios.common import notes, reactions
from maxwait.scenarios.let import estimate_offsets
from maxwait.scenarios.rpc import results
from maxwait.tags import FOREVER, MSEC, SEC, ConfigurationError


def run(name, params=None, overrides=None, seed=0):
    built = build(name, params)
    spec = overrides.apply(built.spec) if overrides else built.spec
    result = run_federation(spec, seed)
    return built, result, {e["name"]: e for e in built.evaluate(result)}


class TestCatalog:
    def test_names(self):
        assert names() == ["aeb", "aircraft_door", "bank_acid", "bank_conservative", "bank_optimistic",
                           "let_pattern", "pubsub_actors", "rpc_futures"]

    @pytest.mark.parametrize("name", names())
    def test_defaults_meet_expectations(self, name):
        _, result, ev = run(name)
        assert result.ok
        assert all(e["passed"] for e in ev.values()), [e for e in ev.values() if not e["passed"]]

    @pytest.mark.parametrize("name", names())
    def test_params_recorded_in_meta(self, name):
        built = build(name)
        assert built.spec.metadata["scenario"] == name
        assert set(built.spec.metadata["params"]) == set(get(name).params)

    def test_unknown_scenario(self):
        with pytest.raises(ConfigurationError, match="unknown scenario"):
            build("nope")


class TestParameters:
    def test_unknown_parameter(self):
        with pytest.raises(ConfigurationError, match="no parameter 'speed'"):
            build("aeb", {"speed": "1"})

    def test_unreadable_duration(self):
        with pytest.raises(ConfigurationError, match="cannot read"):
            build("aeb", {"latency": "fast"})

    def test_below_minimum(self):
        with pytest.raises(ConfigurationError, match="below the minimum"):
            build("let_pattern", {"batch": "0"})

    def test_forever_only_where_allowed(self):
        build("rpc_futures", {"absent_after": "forever"})
        with pytest.raises(ConfigurationError, match="not allowed"):
            build("aeb", {"latency": "forever"})

    def test_choices(self):
        with pytest.raises(ConfigurationError, match="not one of"):
            build("bank_acid", {"reducer": "lww"})

    def test_text_values_are_parsed(self):
        built = build("bank_acid", {"deposits": "[1, 2]", "request_rate": "0", "duration": "2s"})
        assert built.params["deposits"] == [1, 2] and built.params["duration"] == 2 * SEC


class TestDoor:
    def test_disarm_precedes_open_at_each_command(self):
        _, r, ev = run("aircraft_door")
        seq = [(str(e.tag), e.detail["reaction"]) for e in reactions(r, "door")]
        assert seq[:2] == [("1.000000000@0", "disarm"), ("1.000000000@0", "open")]
        assert ev["disarm_before_open"]["detail"]["same_tag_pairs"] == 4

    def test_open_waits_for_the_camera(self):
        _, r, _ = run("aircraft_door")
        opened = reactions(r, "door", "open")[0]
        assert opened.local_time == SEC + 5 * MSEC + 30 * MSEC + 5 * MSEC

    def test_impatient_door_deploys_the_slide(self):
        _, r, ev = run("aircraft_door", {"door_maxwait": "0"})
        assert not ev["no_slide_with_ramp"]["passed"]
        assert not ev["door_not_tardy"]["passed"]

    def test_no_ramp_no_disarm(self):
        _, r, ev = run("aircraft_door", {"ramp_windows": "[]"})
        assert all(not notes(e)["disarmed"] for e in reactions(r, "door", "disarm"))
        assert all(e["passed"] for e in ev.values())


class TestBank:
    def test_schedule_is_seeded_and_avoids_null_tags(self):
        a = request_schedule(3, 2.0, 20 * SEC, [1, 2], avoid_period=SEC)
        assert a == request_schedule(3, 2.0, 20 * SEC, [1, 2], avoid_period=SEC)
        assert a != request_schedule(4, 2.0, 20 * SEC, [1, 2], avoid_period=SEC)
        assert all(t % SEC for t, _ in a)
        assert [t for t, _ in a] == sorted({t for t, _ in a})

    def test_atm_sends_null_messages(self):
        _, r, _ = run("bank_conservative", {"request_rate": "0", "duration": "3s"})
        sends = [e for e in r.trace.of("w1", "send") if e.port == "received"]
        assert [e.tag.time for e in sends] == [0, 0, SEC, SEC, 2 * SEC, 2 * SEC, 3 * SEC, 3 * SEC]
        assert {notes(e).get("balance") for e in reactions(r, "a1")} == {0}

    def test_null_period_bounds_latency(self):
        def worst(period):
            _, r, _ = run("bank_conservative", {"null_period": period})
            return max(e.local_time - e.tag.time for e in reactions(r, "a1"))

        assert worst("200ms") < worst("1s") <= SEC + 5 * MSEC

    def test_penalty_charged_on_overdraft(self):
        sched = [[[100 * MSEC, -50]], [[2 * SEC + MSEC, 40]]]
        _, r, _ = run("bank_conservative", {"schedules": sched, "duration": "3s"})
        balances = [notes(e)["balance"] for e in reactions(r, "a1")]
        assert balances == [0, -30, -30, -30, 10, 10]

    def test_acid_final_balance(self):
        _, r, ev = run("bank_acid", {"deposits": "[5, 7, 11, -3]"})
        assert ev["final_balance"]["detail"]["final"] == {"a1": 20, "a2": 20}

    def test_optimistic_answers_within_maxwait(self):
        _, r, ev = run("bank_optimistic")
        assert max(response_latencies(r)) <= 30 * MSEC
        assert ev["bounded_staleness"]["passed"]


class TestAeb:
    def test_controller_alternates_maxwait(self):
        _, r, ev = run("aeb")
        assert ev["dynamic_maxwait"]["detail"]["values"] == ["0ns", "50ms"]

    def test_modes_alternate(self):
        _, r, _ = run("aeb", {"duration": "300ms"})
        modes = [notes(e)["mode"] for e in reactions(r, "controller", "control")]
        assert modes[:4] == ["fusion", "lidar_only", "fusion", "lidar_only"]

    def test_brakes_when_close(self):
        _, r, _ = run("aeb")
        assert r.trace.end["federates"]["brake"]["final_state"]
        actuated = [e for e in reactions(r, "brake") if notes(e).get("actuated")]
        assert len(actuated) == 1 and actuated[0].tag.time > SEC

    def test_detector_reports_silent_sensors(self):
        cut = Overrides(partitions=[("lidar.lid", 0), ("radar.rad", 0)])
        _, r, _ = run("aeb", overrides=cut)
        found = [(e.tag.time, e.local_time - e.tag.time, notes(e)["fault"]) for e in reactions(r, "detector")]
        assert found[:2] == [(0, 50 * MSEC, "missing lid+rad"), (50 * MSEC, 50 * MSEC, "missing lid")]
        assert all(lag == 50 * MSEC for _, lag, _ in found)
        assert not reactions(r, "controller")


class TestLet:
    def test_estimates_are_tagged_batch_plus_let(self):
        _, r, _ = run("let_pattern")
        offs = estimate_offsets(r)
        assert len(offs) == 20 and all(d == 100 * MSEC for _, d in offs)
        got = [e for e in reactions(r, "fastloop", "estimate") if e.detail["mode"] == "normal"]
        assert len(got) == 19 and all(e.tag.time - notes(e)["batch_tag"] == 100 * MSEC for e in got)

    def test_overrun_trips_check(self):
        _, r, ev = run("let_pattern", {"compute_time": "150ms"})
        assert ev["timing_check"]["detail"]["violations"] > 0

    @pytest.mark.parametrize("compute, late", [("95ms", False), ("97ms", True)])
    def test_boundary_is_compute_plus_round_trip(self, compute, late):
        _, r, ev = run("let_pattern", {"compute_time": compute, "latency": "2ms"})
        assert ev["timing_check"]["passed"]
        assert (ev["timing_check"]["detail"]["violations"] > 0) == late


class TestPubsub:
    def test_arrival_order_handling(self):
        _, r, ev = run("pubsub_actors")
        assert ev["every_message_handled"]["passed"]
        late = [e for e in reactions(r, "subscriber") if e.detail["mode"] == "tardy"]
        assert late and all(e.tag.time >= parse(e.detail["intended"]) for e in late)

    def test_no_jitter_only_the_stop_tag_is_late(self):
        # the subscriber shuts down at the stop tag before that tag's message lands
        _, r, _ = run("pubsub_actors", {"jitter": "0", "phase": "50ms"})
        assert [str(e.tag) for e in r.trace.kind("tardy")] == ["2.000000000@0"]


def parse(text):
    from maxwait.tags import parse_tag

    return parse_tag(text).time


class TestRpc:
    def test_sum_when_timely(self):
        _, r, _ = run("rpc_futures")
        assert results(r) == [(k * SEC, 5 * (k + 1)) for k in range(5)]

    def test_zero_when_a_worker_is_late(self):
        _, r, _ = run("rpc_futures", {"worker2_delay": "150ms"})
        assert [v for _, v in results(r)] == [0] * 5
        handled = [e for e in reactions(r, "delegator", "collect") if e.detail["mode"] == "tardy"]
        assert handled and handled[0].detail["intended"] == "0.000000000@0"

    def test_futures_block_forever(self):
        _, r, _ = run("rpc_futures", {"absent_after": "forever", "worker2_delay": "150ms"})
        got = results(r)
        assert [v for _, v in got] == [5 * (k + 1) for k in range(5)]
        assert r.counts["absent_assumed"] == 0
        # trigger 5 ms, request 5 ms, work 150 ms, response 5 ms
        collect = [e for e in reactions(r, "delegator", "collect") if e.detail["mode"] == "normal"]
        assert [e.local_time - e.tag.time for e in collect] == [165 * MSEC] * 5
