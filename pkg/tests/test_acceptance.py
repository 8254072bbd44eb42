"""Acceptance gate: one test per criterion, each printing a pass line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Every tolerance is pinned here, not calibrated elsewhere.
"""

import math
import random
import time

import pytest
from click.testing import CliRunner

from slicegraph.cli import bundled_scenario_path, main
from slicegraph.domain import IntentLabel, SliceKind, UserProfile, load_scenario
from slicegraph.knowledge import default_kb
from slicegraph.optimizer import (
    Infeasible,
    brute_force_oracle,
    fill_throughput,
    greedy_fill,
    random_instance,
)
from slicegraph.radio import bw_for_rate, spectral_coefficient, user_rate
from slicegraph.sim import generate_users, default_request_pool, run_scenario, scenario_users

SCENARIO = load_scenario(bundled_scenario_path())
CONFIGS = SCENARIO.configs()
ALPHA = 3.3219


def _report(number: int, name: str) -> None:
    print(f"ACCEPTANCE {number} ({name}): PASS")


def test_criterion_1_rate_formula():
    started = time.monotonic()
    assert user_rate(ALPHA, 20.0, 30.0) == pytest.approx(199.35, abs=0.01)
    rng = random.Random(101)
    for _ in range(1000):
        bw = rng.uniform(0.01, 40.0)
        snr = rng.uniform(-10.0, 60.0)
        k = rng.uniform(0.0, 5.0)
        assert user_rate(ALPHA, k * bw, snr) == pytest.approx(
            k * user_rate(ALPHA, bw, snr), rel=1e-9, abs=1e-12
        )
        assert bw_for_rate(ALPHA, user_rate(ALPHA, bw, snr), snr) == pytest.approx(
            bw, rel=1e-9
        )
    elapsed = time.monotonic() - started
    assert elapsed < 1.0, f"criterion 1 took {elapsed:.2f}s"
    _report(1, "rate formula")


def test_criterion_2_lp_optimality():
    started = time.monotonic()
    rng = random.Random(2024)
    checked = 0
    within_grid = 0
    for _ in range(200):
        intervals, budget = random_instance(rng, 0.25)
        greedy = greedy_fill(intervals, budget)
        brute = brute_force_oracle(intervals, budget, 0.25)
        if isinstance(greedy, Infeasible) or isinstance(brute, Infeasible):
            assert type(greedy) is type(brute)
            continue
        checked += 1
        c_max = max(iv.coefficient for iv in intervals)
        greedy_value = fill_throughput(intervals, greedy)
        assert greedy_value >= brute[0] - c_max * 0.25
        if abs(greedy_value - brute[0]) <= c_max * 0.25:
            within_grid += 1
    assert checked >= 150
    assert within_grid / checked >= 0.99
    elapsed = time.monotonic() - started
    assert elapsed < 30.0, f"criterion 2 took {elapsed:.2f}s"
    _report(2, "LP optimality")


def test_criterion_3_capacity_counting():
    started = time.monotonic()
    embb = IntentLabel(slice=SliceKind.EMBB, required_rate_mbps=100.0, required_latency_ms=50.0)
    urllc = IntentLabel(slice=SliceKind.URLLC, required_rate_mbps=10.0, required_latency_ms=5.0)
    # snr 51 dB pins eMBB lowers at exactly 6 MHz; snr 31 dB pins URLLC at 1 MHz
    users = [
        UserProfile(id=i, snr_db=51.0, request_text="video conferencing for a remote design review",
                    ground_truth=embb)
        for i in range(1, 17)
    ] + [
        UserProfile(id=100 + i, snr_db=31.0, request_text="remote crane control at the port",
                    ground_truth=urllc)
        for i in range(1, 32)
    ]
    result = run_scenario(SCENARIO, "rule", users=users)
    network = result.network
    assert len(network.embb.allocations) == 15
    assert len(network.urllc.allocations) == 30
    rejected = dict(network.rejected)
    assert rejected[16] == "capacity"
    assert rejected[131] == "capacity"  # the 31st URLLC arrival
    assert network.embb.allocated_mhz() == pytest.approx(90.0)
    assert network.urllc.allocated_mhz() == pytest.approx(30.0)
    elapsed = time.monotonic() - started
    assert elapsed < 1.0, f"criterion 3 took {elapsed:.2f}s"
    _report(3, "capacity counting")


def test_criterion_4_method_dominance():
    started = time.monotonic()
    for seed in range(100, 110):
        users = scenario_users(SCENARIO, seed=seed)
        assert len(users) == 30
        metrics = {m: run_scenario(SCENARIO, m, users=users).metrics for m in ("rule", "agent", "prompt")}
        thr = [metrics[m].throughput_mbps for m in ("rule", "agent", "prompt")]
        idle = [metrics[m].idle_rate for m in ("rule", "agent", "prompt")]
        assert thr[0] >= thr[1] >= thr[2], (seed, thr)
        assert idle[0] <= idle[1] <= idle[2], (seed, idle)
        assert thr[0] > thr[2], (seed, "throughput chain not strict anywhere")
        assert idle[2] > idle[0], (seed, "idle chain not strict anywhere")
        assert metrics["agent"].supported_users >= metrics["prompt"].supported_users
    elapsed = time.monotonic() - started
    assert elapsed < 10.0, f"criterion 4 took {elapsed:.2f}s"
    _report(4, "method dominance")


def test_criterion_5_constraint_fuzz():
    started = time.monotonic()
    pool = default_request_pool()
    sequences = 1000
    for seed in range(sequences):
        rng = random.Random(seed)
        n = rng.randint(4, 10)
        users = generate_users(n, seed, SCENARIO.radio, pool,
                               radius_m=1000.0, min_distance_m=1.0)
        result = run_scenario(SCENARIO, "agent", users=users)
        network = result.network
        network.check_partition()
        for _uid, entries in result.traces:
            adjust_visits = sum(1 for t in entries if t.node == "bw_adjust")
            assert len(entries) == 4 + 2 * adjust_visits
        by_id = {u.id: u for u in users}
        for kind in SliceKind:
            ledger = network.ledger(kind)
            cfg = ledger.config
            assert math.fsum(a.bandwidth_mhz for a in ledger.allocations) <= cfg.budget_mhz
            for alloc in ledger.allocations:
                assert cfg.bw_min_mhz * (1 - 1e-9) <= alloc.bandwidth_mhz <= cfg.bw_max_mhz * (1 + 1e-9)
                snr = by_id[alloc.user_id].snr_db
                coeff = spectral_coefficient(SCENARIO.radio.alpha, snr)
                assert alloc.rate_mbps == pytest.approx(coeff * alloc.bandwidth_mhz, rel=1e-9)
                required = by_id[alloc.user_id].ground_truth.required_rate_mbps
                assert min(alloc.rate_mbps, cfg.rate_max_mbps) >= required * (1 - 1e-9)
    elapsed = time.monotonic() - started
    assert elapsed < 60.0, f"criterion 5 took {elapsed:.2f}s"
    _report(5, "constraint fuzz")


def test_criterion_6_intent_accuracy():
    started = time.monotonic()
    users = scenario_users(SCENARIO, seed=42)
    result = run_scenario(SCENARIO, "agent", users=users)
    assert result.metrics.intent_accuracy == 1.0

    from slicegraph.agent import fallback_intent

    kb = default_kb()
    correct = 0
    for entry in kb.entries:
        held_out = kb.without(entry.id)
        assert len(held_out) == len(kb) - 1
        predicted = fallback_intent(entry.text, CONFIGS)
        if predicted.slice is entry.label.slice:
            correct += 1
    accuracy = correct / len(kb)
    assert accuracy >= 0.90, f"fallback leave-one-out accuracy {accuracy:.2%}"
    elapsed = time.monotonic() - started
    assert elapsed < 5.0, f"criterion 6 took {elapsed:.2f}s"
    _report(6, "intent accuracy")


def test_criterion_7_determinism(tmp_path):
    started = time.monotonic()
    runner = CliRunner()
    args = ["run", "--method", "all", "--trials", "2", "--no-figures"]
    for sub in ("a", "b"):
        result = runner.invoke(main, args + ["--out", str(tmp_path / sub)], catch_exceptions=False)
        assert result.exit_code == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    for trace in sorted((a / "traces").iterdir()):
        twin = b / "traces" / trace.name
        assert trace.read_bytes() == twin.read_bytes()
    elapsed = time.monotonic() - started
    assert elapsed < 5.0, f"criterion 7 took {elapsed:.2f}s"
    _report(7, "determinism")


def test_criterion_8_case_study_walkthrough():
    from make_golden import GOLDEN_PATH, USER18_SLOT, render_trace, run_walkthrough

    preloaded, final = run_walkthrough()
    # the slice starts the slot full at per-user maxima
    assert [a.bandwidth_mhz for a in preloaded.embb.allocations] == [20.0, 20.0, 20.0, 20.0]
    assert [t.node for t in final.trace] == [
        "intent", "slice_alloc", "bw_alloc", "qos_eval", "bw_adjust", "qos_eval",
    ]
    ledger = final.network.embb
    assert 18 in ledger.user_ids()
    bws = {a.user_id: a.bandwidth_mhz for a in ledger.allocations}
    rates = {a.user_id: a.rate_mbps for a in ledger.allocations}
    assert bws[9] < 20.0 and bws[11] < 20.0
    requirements = {2: 100.0, 5: 100.0, 9: 205.0, 11: 205.0, 18: 123.87}
    for uid, required in requirements.items():
        assert min(rates[uid], 400.0) >= required * (1 - 1e-9)
    assert math.fsum(bws.values()) <= 90.0

    golden = GOLDEN_PATH.read_text(encoding="utf-8")
    assert render_trace(final) == golden
    import json

    records = [json.loads(line) for line in golden.strip().splitlines()]
    assert [r["node"] for r in records][-3:] == ["qos_eval", "bw_adjust", "qos_eval"]
    assert all(r["slot"] == USER18_SLOT for r in records)
    _report(8, "case-study walkthrough")
