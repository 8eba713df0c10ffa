import io

import numpy as np
import pytest

from codedqueue import InvalidConfig, SystemConfig, UnstableSystem, bos_capacity, bos_stationary
from codedqueue.bos import bos_mean_packet_delay, bos_request_offset_exact
from codedqueue.oracle import build_generator
from codedqueue.rng import ExpStream, make_generator
from codedqueue.sim import (
    TRACE_COLUMNS,
    mean_ci,
    paired_difference,
    queue_drift,
    run_replications,
    simulate_bos,
    simulate_greedy,
    simulate_uncoded,
    write_trace,
)
from codedqueue.states import Kind

SIMS = [simulate_uncoded, simulate_bos, simulate_greedy]


@pytest.mark.parametrize("sim", SIMS)
def test_deterministic(sim):
    cfg = SystemConfig(2, 1.2)
    a = sim(cfg, 5000, 500, seed=(3, 1))
    b = sim(cfg, 5000, 500, seed=(3, 1))
    assert a.report == b.report
    assert a.mean_offset == b.mean_offset
    c = sim(cfg, 5000, 500, seed=(3, 2))
    assert c.report != a.report


@pytest.mark.parametrize("sim", SIMS)
@pytest.mark.parametrize("r", [2, 3])
def test_record_invariants(sim, r):
    res = sim(SystemConfig(r, 0.8 * r), 4000, 400, seed=11, trace=True)
    assert res.distinct_ok
    for rec in res.records:
        assert rec.serving_su[0] != rec.serving_su[1]
        assert min(rec.waits) >= 0
        assert min(rec.services) > 0
        assert rec.sojourn >= max(rec.waits)
    assert res.mean_request_delay >= res.mean_packet_delay


def test_uncoded_pools_are_fixed():
    res = simulate_uncoded(SystemConfig(3, 2.0), 3000, 0, seed=1, trace=True)
    assert all(r.serving_su[0] < 3 <= r.serving_su[1] for r in res.records)


def test_bos_packet2_waits_for_a_different_unit():
    res = simulate_bos(SystemConfig(2, 1.7), 5000, 0, seed=4, trace=True)
    for rec in res.records:
        a1, a2 = rec.packet_assign_time
        assert a1 <= a2
    # only the head-of-line request is served: packet-1 starts are FCFS
    first = np.array([r.packet_assign_time[0] for r in res.records])
    second = np.array([r.packet_assign_time[1] for r in res.records])
    assert (second[:-1] <= first[1:]).all()


def test_greedy_can_overtake_a_blocked_head():
    res = simulate_greedy(SystemConfig(2, 1.8), 20000, 0, seed=4, trace=True)
    first = np.array([r.packet_assign_time[0] for r in res.records])
    second = np.array([r.packet_assign_time[1] for r in res.records])
    assert (second[:-1] > first[1:]).any()


@pytest.mark.parametrize("r", [2, 3])
def test_bos_transitions_are_chain_edges(r):
    cfg = SystemConfig(r, 0.85 * bos_capacity(r))
    res = simulate_bos(cfg, 20000, 0, seed=8)
    edges = build_generator(cfg, res.max_level + 2).edges()
    assert res.transitions <= edges
    assert any(t.kind is Kind.GOOD for _, t in res.transitions)


def test_bos_occupancy_is_a_distribution():
    res = simulate_bos(SystemConfig(2, 1.5), 20000, 2000, seed=2)
    assert sum(res.occupancy.values()) == pytest.approx(1.0, abs=1e-9)


def test_light_traffic():
    cfg = SystemConfig(2, 0.01)
    for sim in SIMS:
        res = sim(cfg, 4000, 0, seed=5)
        assert res.mean_packet_delay == pytest.approx(1.0, abs=0.05)
    b = simulate_bos(cfg, 4000, 0, seed=5)
    g = simulate_greedy(cfg, 4000, 0, seed=5)
    tol = b.report.ci_halfwidth_packet + g.report.ci_halfwidth_packet
    assert abs(b.mean_packet_delay - g.mean_packet_delay) <= tol


@pytest.mark.parametrize("name", ["uncoded", "bos"])
def test_tie_break_policy_does_not_matter(name):
    cfg = SystemConfig(2, 1.4)
    low = run_replications(name, cfg, 6, 40, 20000)
    rnd = run_replications(name, cfg, 6, 41, 20000, su_policy="random")
    gap = abs(low.report.mean_packet_delay - rnd.report.mean_packet_delay)
    assert gap <= low.report.ci_halfwidth_packet + rnd.report.ci_halfwidth_packet


def test_random_policy_still_respects_rules():
    res = simulate_greedy(SystemConfig(3, 2.6), 5000, 0, seed=9, su_policy="random")
    assert res.distinct_ok


def test_uncoded_matches_mm2():
    res = run_replications("uncoded", SystemConfig(2, 1.0), 5, 3, 20000)
    assert abs(res.report.mean_packet_delay - 4 / 3) <= res.report.ci_halfwidth_packet


def test_bos_matches_analysis():
    cfg = SystemConfig(3, 2.0)
    res = run_replications("bos", cfg, 5, 3, 20000)
    d = bos_mean_packet_delay(bos_stationary(cfg), cfg)
    assert abs(res.report.mean_packet_delay - d) <= res.report.ci_halfwidth_packet


def test_offset_matches_load_aware_formula():
    cfg = SystemConfig(2, 1.5)
    res = run_replications("bos", cfg, 10, 77, 30000)
    expected = bos_request_offset_exact(bos_stationary(cfg), cfg)
    assert abs(res.mean_offset - expected) <= res.ci_halfwidth_offset


def test_throughput_ceiling_visible():
    cfg = SystemConfig(2, 1.96)
    assert bos_capacity(2) < cfg.lam < 2.0
    with pytest.raises(UnstableSystem):
        simulate_bos(cfg, 1000)
    bos = simulate_bos(cfg, 60000, 0, seed=1, record_path=True, check_stability=False)
    greedy = simulate_greedy(cfg, 60000, 0, seed=1, record_path=True)
    # arrivals exceed the blocking-one service capacity by 2*(1.96 - 1.92) packets per unit time
    assert queue_drift(bos.path) > 0.04
    assert abs(queue_drift(greedy.path)) < 0.01


def test_refuses_unstable_and_invalid():
    with pytest.raises(UnstableSystem):
        simulate_uncoded(SystemConfig(2, 2.0), 100)
    with pytest.raises(UnstableSystem):
        simulate_greedy(SystemConfig(2, 2.5), 100)
    with pytest.raises(InvalidConfig):
        simulate_bos(SystemConfig(2, 1.0), 1)
    with pytest.raises(InvalidConfig):
        simulate_bos(SystemConfig(2, 0.0), 100)
    with pytest.raises(InvalidConfig):
        simulate_bos(SystemConfig(2, 1.0), 100, su_policy="first")
    with pytest.raises(InvalidConfig):
        run_replications("bos", SystemConfig(2, 1.0), 1)


def test_replications_bit_reproducible():
    cfg = SystemConfig(2, 1.3)
    a = run_replications("bos", cfg, 3, 9, 3000)
    b = run_replications("bos", cfg, 3, 9, 3000)
    assert a.report == b.report
    assert [x.occupancy for x in a.results] == [x.occupancy for x in b.results]


def test_parallel_matches_sequential():
    cfg = SystemConfig(2, 1.3)
    a = run_replications("greedy", cfg, 3, 9, 3000)
    b = run_replications("greedy", cfg, 3, 9, 3000, workers=2)
    assert a.report == b.report


def test_ci_shrinks_with_reps():
    cfg = SystemConfig(2, 1.0)
    h10 = run_replications("uncoded", cfg, 10, 5, 5000).report.ci_halfwidth_packet
    h20 = run_replications("uncoded", cfg, 20, 5, 5000).report.ci_halfwidth_packet
    assert 0.45 < h20 / h10 < 1.0


def test_aggregate_inside_replication_cis():
    summary = run_replications("uncoded", SystemConfig(2, 0.8), 10, 12, 20000)
    m = summary.report.mean_packet_delay
    inside = [abs(x.mean_packet_delay - m) <= x.report.ci_halfwidth_packet for x in summary.results]
    assert sum(inside) >= 8


def test_paired_comparison_prefers_greedy():
    cfg = SystemConfig(2, 1.6)
    b = run_replications("bos", cfg, 5, 1, 20000)
    g = run_replications("greedy", cfg, 5, 1, 20000)
    mean, upper = paired_difference(g, b)
    assert mean < 0 and upper < 0


def test_trace_csv():
    res = simulate_bos(SystemConfig(2, 1.0), 50, 0, seed=1, trace=True)
    buf = io.StringIO()
    write_trace(buf, res.records)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == list(TRACE_COLUMNS)
    assert len(lines) == 51
    first = lines[1].split(",")
    assert float(first[1]) == res.records[0].arrival_time


def test_streams():
    a = ExpStream(make_generator(7, 3), 2.0, block=8)
    b = ExpStream(make_generator(7, 3), 2.0, block=64)
    xs, ys = [a() for _ in range(100)], [b() for _ in range(100)]
    assert xs == ys
    c = ExpStream(make_generator(7, 4), 2.0)
    assert [c() for _ in range(5)] != xs[:5]
    big = ExpStream(make_generator(1, 0), 4.0)
    assert np.mean([big() for _ in range(40000)]) == pytest.approx(0.25, rel=0.02)


def test_mean_ci():
    m, h = mean_ci([1.0, 2.0, 3.0])
    assert m == 2.0
    assert h == pytest.approx(4.302652729911275 / np.sqrt(3), rel=1e-9)
