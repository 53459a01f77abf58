"""Event simulator: determinism, limits, Erlang-B and Little's-law sanity."""

import math

import pytest

from mbsalloc.admission import CallClass
from mbsalloc.analytic import derive_rates
from mbsalloc.config import read_config
from mbsalloc.metrics import METRICS
from mbsalloc.simulator import SimConfig, run, run_replication, validate_against_chain

from oracles import erlang_b

MBPS = 1_000_000


def test_defaults(t1):
    sim = SimConfig(t1, 1.0)
    holding = 1 / (1 / 120 + 1 / 540)
    assert sim.resolved_warmup == pytest.approx(10 * holding)
    assert sim.resolved_horizon == pytest.approx(10 * holding + 100_000)
    assert sim.seed == 42 and sim.replications == 10


@pytest.mark.parametrize("kwargs", [
    {"replications": 0},
    {"warmup": 100.0, "horizon": 50.0},
    {"seed": -1},
    {"seed": 2 ** 64},
])
def test_bad_sim_configs(t1, kwargs):
    with pytest.raises(ValueError):
        SimConfig(t1, 1.0, **kwargs)


def test_same_config_is_bit_identical(t1):
    sim = SimConfig(t1, 0.8, calls=3000, replications=2)
    assert run(sim) == run(sim)


def test_seed_changes_outcome(t1):
    a = run(SimConfig(t1, 0.8, calls=3000, replications=2, seed=1))
    b = run(SimConfig(t1, 0.8, calls=3000, replications=2, seed=2))
    assert a.counts != b.counts


def test_schemes_share_arrival_sequences(t1):
    reports = [run(SimConfig(t1.replace(scheme=s), 1.0, calls=2000, replications=2)) for s in (1, 2, 4)]
    offered = [{k: (c.new_offered, c.handover_offered) for k, c in r.counts.items()} for r in reports]
    assert offered[0] == offered[1] == offered[2]


def test_zero_load(t1):
    r = run(SimConfig(t1, 0.0, horizon=5000.0, replications=2))
    assert r.p_drop == r.p_block_voice == r.p_block_back == 0.0
    assert r.mbs_bw == pytest.approx(12 * MBPS)
    assert r.utilization == pytest.approx(0.6)
    assert r.mean_mbs_layers == pytest.approx(10)


def test_vanishing_load_keeps_full_mbs(t1):
    r = run(SimConfig(t1, 0.001, calls=200, replications=2))
    assert r.p_drop == 0.0 and r.p_block_back == 0.0
    assert r.mbs_bw == pytest.approx(12 * MBPS)


@pytest.mark.parametrize("scheme", [1, 3, 5])
def test_counts_and_ranges(t1, scheme):
    r = run(SimConfig(t1.replace(scheme=scheme), 1.2, calls=3000, replications=2))
    for counts in r.counts.values():
        assert counts.consistent
        assert counts.new_offered > 0
    for name in METRICS[:6]:
        assert 0.0 <= r.value(name) <= 1.0
    assert 6 * MBPS - 1 <= r.mbs_bw <= 12 * MBPS + 1


@pytest.mark.parametrize("scheme", range(1, 8))
def test_full_invariant_checks_during_run(t1, scheme):
    result = run_replication(SimConfig(t1.replace(scheme=scheme), 1.5, calls=1500, replications=1,
                                       full_checks=True), 0)
    assert result.max_used_bw <= t1.capacity


def test_littles_law(t1):
    r = run(SimConfig(t1, 0.5, calls=20_000, replications=3))
    _, _, mu = derive_rates(t1, 0.5)
    assert r.mean_active_calls == pytest.approx(r.carried_rate / mu, rel=0.05)


def test_rigid_cell_matches_erlang_b():
    cfg = read_config("builtin:rigid_erlang")
    rate = 0.3
    (v, u, b), h, mu = derive_rates(cfg, rate)
    expected = erlang_b(40, (v + u + b + h) / mu)
    r = run(SimConfig(cfg, rate, calls=20_000, replications=5))
    for name in ("p_drop", "p_block_voice", "p_block_unicast", "p_block_back"):
        se = r.halfwidth(name) / 1.96
        assert abs(r.value(name) - expected) <= 3 * se, name


def test_toy_config_validates_against_exact_chain():
    cfg = read_config("builtin:toy_exact")
    result = validate_against_chain(SimConfig(cfg, 0.4, calls=20_000, replications=5))
    assert result.exact
    assert result.passed, result.rows
    assert [row.metric for row in result.rows] == ["p_drop", "p_block_voice", "p_block_unicast", "p_block_back"]


def test_zero_load_validation_agrees(t1):
    result = validate_against_chain(SimConfig(t1, 0.0, horizon=3000.0, replications=2))
    assert all(row.analytic == row.simulated == 0.0 for row in result.rows)
    assert result.passed


def test_reference_cell_validation_is_report_only(t1):
    result = validate_against_chain(SimConfig(t1, 0.8, calls=2000, replications=2))
    assert not result.exact
    assert all(math.isfinite(row.gap) for row in result.rows)


def test_background_blocked_most_under_priority(t1):
    r = run(SimConfig(t1, 1.0, calls=5000, replications=2))
    assert r.p_drop <= r.p_block_voice <= r.p_block_back
    assert r.counts[CallClass.BACKGROUND.value].new_blocked > 0
