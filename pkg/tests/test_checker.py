import itertools
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxwait.checker import (
    FAIL, INCONCLUSIVE, PASS, StateMachine, absence_detection, availability_report,
    check_eventual_consistency, check_logical_time_consistency, check_replicas, check_trace,
    message_accounting, permutation_oracle,
)
from maxwait.config import Overrides
from maxwait.runtime import run_federation
from maxwait.scenarios import build
from maxwait.scenarios.bank import acid_machine, penalty_machine, staleness
from maxwait.tags import MSEC, SEC
from maxwait.trace import Trace

JITTER = Overrides(jitter=[("*", 0, 40 * MSEC)])


def acid_run(seed, **params):
    return run_federation(JITTER.apply(build("bank_acid", params).spec), seed)


def diverging_penalty_run():
    for seed in range(50):
        r = acid_run(seed, reducer="penalty", deposits=[20, 40, -50])
        if check_eventual_consistency(r.trace, ["a1", "a2"]).verdict == FAIL:
            return r
    raise AssertionError("no diverging seed")


class TestLogicalConsistency:
    def test_conservative_bank_passes(self):
        v = check_logical_time_consistency(run_federation(build("bank_conservative").spec).trace, ["a1", "a2"])
        assert v.verdict == PASS

    def test_reports_first_divergent_tag(self):
        tr = diverging_penalty_run().trace
        v = check_logical_time_consistency(tr, ["a1", "a2"])
        assert v.verdict == FAIL
        d = v.divergence
        assert d["tag"] and d["index"] >= 0
        assert d["a1"] != d["a2"]

    def test_coordination_free_replicas_diverge_in_tags(self):
        # even the order-insensitive reducer visits different tags on each replica
        tr = acid_run(0).trace
        assert check_logical_time_consistency(tr, ["a1", "a2"]).verdict == FAIL
        assert check_eventual_consistency(tr, ["a1", "a2"]).verdict == PASS

    def test_single_member(self):
        tr = run_federation(build("aircraft_door").spec).trace
        assert check_logical_time_consistency(tr, ["door"]).verdict == PASS

    def test_missing_state_digest_is_inconclusive(self):
        tr = run_federation(build("bank_conservative").spec).trace
        events = [replace(e, state_digest=None) if e.federate == "a2" else e for e in tr.events]
        v = check_logical_time_consistency(Trace(tr.meta, events, tr.end), ["a1", "a2"])
        assert v.verdict == INCONCLUSIVE and "a2" in v.reason

    def test_duplicate_delivery_is_inconclusive(self):
        tr = run_federation(build("bank_conservative").spec).trace
        dup = next(e for e in tr.events if e.kind == "deliver")
        v = check_logical_time_consistency(Trace(tr.meta, tr.events + [dup], tr.end), ["a1", "a2"])
        assert v.verdict == INCONCLUSIVE and "duplicate" in v.reason


class TestEventualConsistency:
    def test_missing_federate(self):
        tr = acid_run(0).trace
        assert check_eventual_consistency(tr, ["a1", "zz"]).verdict == INCONCLUSIVE

    def test_truncated_trace(self):
        tr = acid_run(0).trace
        v = check_eventual_consistency(Trace(tr.meta, tr.events, None), ["a1", "a2"])
        assert v.verdict == INCONCLUSIVE

    def test_unequal_message_sets_are_inconclusive(self):
        spec = Overrides(partitions=[("w1.received", 0)]).apply(build("bank_acid").spec)
        v = check_eventual_consistency(run_federation(spec).trace, ["a1", "a2"])
        assert v.verdict == INCONCLUSIVE and "did not receive" in v.reason

    def test_divergent_final_states(self):
        v = check_eventual_consistency(diverging_penalty_run().trace, ["a1", "a2"])
        assert v.verdict == FAIL
        assert len(set(v.divergence["final_states"].values())) == 2

    @pytest.mark.parametrize("name, group", [("aircraft_door", ["door"]), ("bank_conservative", ["a1", "a2"]),
                                             ("bank_optimistic", ["b1", "b2"])])
    def test_logical_pass_implies_eventual_pass(self, name, group):
        for seed in range(5):
            tr = run_federation(JITTER.apply(build(name).spec), seed).trace
            if check_logical_time_consistency(tr, group).verdict == PASS:
                assert check_eventual_consistency(tr, group).verdict == PASS


def brute_force_finals(step, initial, messages):
    """Independent enumeration: fold every index permutation by hand."""
    finals = set()
    for order in itertools.permutations(range(len(messages))):
        s = initial
        for i in order:
            s = step(s, messages[i])
        finals.add(s)
    return finals


class TestPermutationOracle:
    def test_acid_example(self):
        assert brute_force_finals(lambda s, v: s + v, 0, [10, 20, -5]) == {25}
        assert len(permutation_oracle(acid_machine(), [10, 20, -5])) == 1

    def test_empty_multiset(self):
        assert len(permutation_oracle(acid_machine(), [])) == 1

    def test_size_limit(self):
        with pytest.raises(ValueError, match="at most 8"):
            permutation_oracle(acid_machine(), list(range(9)))

    def test_penalty_order_sensitivity(self):
        def step(b, v):
            return b + v if b >= -v else b - 30

        m = [20, 40, -50]
        assert len(permutation_oracle(penalty_machine(), m)) == len(brute_force_finals(step, 0, m)) == 3

    @given(st.lists(st.integers(-100, 100), max_size=5), st.integers(-50, 50))
    @settings(max_examples=60, deadline=None)
    def test_matches_brute_force(self, m, initial):
        def step(b, v):
            return b + v if b >= -v else b - 30

        got = permutation_oracle(penalty_machine(initial), m)
        assert len(got) == len(brute_force_finals(step, initial, m))

    def test_custom_digest(self):
        machine = StateMachine((), lambda s, v: tuple(sorted(s + (v,))), digest=repr)
        assert permutation_oracle(machine, [3, 1, 2]) == {"(1, 2, 3)"}

    @pytest.mark.parametrize("reducer, machine, deposits", [
        ("acid", acid_machine(), [10, 20, -5]),
        ("penalty", penalty_machine(), [30, -50]),
        ("penalty", penalty_machine(), [20, 40, -50]),
        ("penalty", penalty_machine(), [-50, 20, 40]),
    ])
    def test_oracle_agrees_with_replica_runs(self, reducer, machine, deposits):
        """One final state under every order iff the replicas always converge."""
        single = len(permutation_oracle(machine, deposits)) == 1
        verdicts = {check_eventual_consistency(acid_run(s, reducer=reducer, deposits=deposits).trace,
                                               ["a1", "a2"]).verdict for s in range(50)}
        assert INCONCLUSIVE not in verdicts
        assert (verdicts == {PASS}) == single


def expected_staleness(t, delay=10 * SEC, period=10 * SEC):
    """Age of the newest true balance a request at time t can have seen."""
    if t < delay + period:
        return t
    return t - ((t - delay) // period) * period


class TestAvailability:
    def test_zero_latency_staleness(self):
        spec = Overrides(latency=[("*", 0)]).apply(build("bank_optimistic").spec)
        r = run_federation(spec)
        got = staleness(r)
        tags = [e.tag.time for am in ("am1", "am2") for e in r.trace.of(am, "reaction")
                if e.detail["reaction"] == "request" and "request" in e.detail["inputs"]]
        assert got and got == [expected_staleness(t) for t in tags]

    def test_report_shapes(self):
        r = run_federation(build("bank_optimistic").spec)
        avail = r.trace.meta["availability"]
        rep = availability_report(r.trace, avail["pairs"], avail["staleness_key"])
        assert rep["latency"]["max"] <= 30 * MSEC
        assert rep["staleness"]["max"] <= 20 * SEC
        assert rep["unavailable"] == 0

    def test_expected_shortfall_counts_as_unavailable(self):
        r = run_federation(build("bank_optimistic").spec)
        n = len([e for e in r.trace.of("am1", "reaction") if "request" in e.detail["inputs"]])
        rep = availability_report(r.trace, [{"request": "am1.request", "expected": n + 2}])
        assert rep["unavailable"] == 2

    def test_response_port_pairs(self):
        r = run_federation(build("rpc_futures").spec)
        rep = availability_report(r.trace, [{"request": "delegator.trigger", "response": "delegator.result"}])
        assert rep["pairs"][0]["latency"]["n"] > 0
        assert rep["pairs"][0]["unavailable"] == 0


class TestAbsenceDetection:
    def test_rpc_timeouts(self):
        r = run_federation(build("rpc_futures", {"worker2_delay": "150ms"}).spec)
        rows = absence_detection(r.trace)["events"]
        at_requests = [x for x in rows if x["tag"].endswith("@0")]
        assert at_requests and all(x["latency"] == 100 * MSEC for x in at_requests)
        # the late answer opens a handling tag one microstep later, already past the timeout
        later = [x for x in rows if x["tag"].endswith("@1")]
        assert all(x["latency"] == 165 * MSEC for x in later)

    def test_nothing_to_detect(self):
        r = run_federation(build("aircraft_door").spec)
        assert absence_detection(r.trace)["latency"] == {"n": 0}


class TestReplicas:
    def test_conservative_federate_matches_across_seeds(self):
        traces = [run_federation(JITTER.apply(build("aircraft_door").spec), s).trace for s in range(4)]
        assert check_replicas(traces, "door").verdict == PASS

    def test_zero_maxwait_federate_differs(self):
        traces = [acid_run(s, reducer="penalty", deposits=[20, 40, -50]).trace for s in range(20)]
        assert check_replicas(traces, "a1").verdict == FAIL

    def test_missing_or_truncated(self):
        tr = run_federation(build("aircraft_door").spec).trace
        assert check_replicas([tr], "nobody").verdict == INCONCLUSIVE
        assert check_replicas([tr, Trace(tr.meta, tr.events, None)], "door").verdict == INCONCLUSIVE


class TestTraceReport:
    def test_accounting(self):
        acc = message_accounting(run_federation(build("pubsub_actors").spec).trace)
        assert acc["balanced"] and acc["tardy"] > 0

    def test_truncated_report(self):
        tr = run_federation(build("aircraft_door").spec).trace
        rep = check_trace(Trace(tr.meta, tr.events[:5], None, partial_line=7))
        assert rep["truncated"] and "line 7" in rep["diagnostic"]
        assert any(v["verdict"] == INCONCLUSIVE and v["check"] == "completeness" for v in rep["verdicts"])

    def test_groups_from_meta(self):
        rep = check_trace(run_federation(build("bank_conservative").spec).trace)
        assert {v["check"]: v["verdict"] for v in rep["verdicts"]} == {
            "logical_time_consistency": PASS, "eventual_consistency": PASS}
        assert rep["fifo_violations"] == []
