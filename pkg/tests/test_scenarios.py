"""Profiles, the canonical step loop, sweeps, forced-ratio experiments."""

import math

import numpy as np
import pytest

from crowdsync.dynamics import (
    CrowdConfig,
    AgentParams,
    UniformNoise,
    WienerNoise,
    homogeneous_agents,
)
from crowdsync.metrics import order_parameter_closed_form
from crowdsync.scenarios import (
    GOLDEN_NAMES,
    aggregate_trajectory,
    apply_sweep_value,
    bubble_profile,
    build_profile,
    explicit_profile,
    forced_ratio_run,
    golden_scenario,
    ramp_profile,
    run,
    run_spec,
    step_profile,
    summarize,
    sweep,
    zero_profile,
)
from crowdsync.switching import Stability, SwitchRule
from crowdsync.rng import make_generator


def simple_config(n=100, a=0.01, b_low=0.0, b_high=0.5, c=1.0, **kw):
    return CrowdConfig(n=n, a=a, agents=homogeneous_agents(n, b_low, b_high, c), **kw)


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------

def test_zero_profile():
    assert np.array_equal(zero_profile(10).increments, np.zeros(10))


def test_step_profile():
    assert np.array_equal(step_profile(6, 1.0, 3).increments, [0, 0, 0, 1, 0, 0])


def test_step_profile_onset_bounds():
    with pytest.raises(ValueError):
        step_profile(6, 1.0, 6)
    with pytest.raises(ValueError):
        step_profile(6, 1.0, -1)


def test_ramp_profile():
    inc = ramp_profile(8, 0.5, 2, 5).increments
    assert np.array_equal(inc, [0, 0, 0.5, 0.5, 0.5, 0, 0, 0])


def test_bubble_profile_shape():
    """Integral checks against the declared slopes."""
    prof = bubble_profile(
        100, build_slope=0.1, peak_step=40, crash_slope=-0.5, stabilize_step=50,
        confusion_scale=0.6,
    )
    inc = prof.increments
    E = np.cumsum(inc)
    assert np.all(inc[:40] > 0)
    assert inc[:40].sum() == pytest.approx(4.0, rel=1e-12)
    assert np.all(inc[40:50] < 0)
    peak_E = E[39]
    assert E.max() == pytest.approx(peak_E)
    assert np.all(E[50:] < peak_E)  # post-crash E stays below the peak
    # confusion tail returns the declared fraction of the crash, minus truncation
    assert inc[50:].sum() == pytest.approx(0.6 * 5.0, rel=1e-6)


def test_bubble_profile_validation():
    with pytest.raises(ValueError):
        bubble_profile(100, 0.1, 0, -0.5, 50)
    with pytest.raises(ValueError):
        bubble_profile(100, 0.1, 40, -0.5, 100)
    with pytest.raises(ValueError):
        bubble_profile(100, -0.1, 40, -0.5, 50)
    with pytest.raises(ValueError):
        bubble_profile(100, 0.1, 40, 0.5, 50)
    with pytest.raises(ValueError):
        bubble_profile(100, 0.1, 40, -0.5, 50, confusion_scale=1.0)


def test_explicit_profile_roundtrip():
    series = [0.1, -0.2, 0.3]
    assert np.array_equal(explicit_profile(3, series).increments, series)
    with pytest.raises(ValueError):
        explicit_profile(4, series)


def test_build_profile_dispatch():
    prof = build_profile("step", {"height": 2.0, "onset": 1}, 4)
    assert prof.kind == "step"
    with pytest.raises(ValueError):
        build_profile("sawtooth", {}, 4)


# ---------------------------------------------------------------------------
# the canonical loop
# ---------------------------------------------------------------------------

def test_quiescence():
    cfg = simple_config(b_low=0.3, b_high=0.9)
    result = run(cfg, SwitchRule(saturation_scale=1.0), zero_profile(50))
    assert np.all(result.dS == 0.0)
    assert np.all(result.dO == 0.0)
    assert np.all(result.n_reactive == 0)
    assert result.peak_ratio == 0.0


def test_step_records_are_internally_consistent():
    spec = golden_scenario("fig4-stable")
    result = run_spec(spec)
    a = spec.config.a
    for k in range(result.steps_run):
        rec = result.record(k)
        assert rec.dS == pytest.approx(float(rec.agent_actions.sum()), rel=1e-12, abs=1e-15)
        assert rec.dO == a * rec.dS
        assert 0 <= rec.n_reactive <= spec.config.n
    assert np.array_equal(result.O, np.cumsum(result.dO))


def test_delayed_response_recursion_holds_in_engine():
    """Each dO equals (a*C)*dE + (a*B)*dO_prev with that step's coupling."""
    spec = golden_scenario("fig4-stable")
    result = run_spec(spec)
    a = spec.config.a
    C = sum(ag.c for ag in spec.config.agents)
    dO_prev = 0.0
    for k in range(result.steps_run):
        expected = a * C * result.dE[k] + a * result.b_total[k] * dO_prev
        assert result.dO[k] == pytest.approx(expected, rel=1e-12, abs=1e-15)
        dO_prev = result.dO[k]


def test_per_agent_loop_agrees_with_aggregate_recursion():
    """Pinned coupling, no noise: the two simulation paths coincide."""
    cfg = simple_config(n=37, b_low=0.0, b_high=0.9, c=1.3)
    prof = step_profile(60, height=2.0, onset=5)
    result = run(cfg, SwitchRule(saturation_scale=1.0), prof, pinned_reactive=20)
    b_total = 20 * 0.9
    c_total = 37 * 1.3
    reference = aggregate_trajectory(cfg.a, b_total, c_total, prof.increments)
    assert np.allclose(result.dO, reference, rtol=1e-12, atol=1e-15)


def test_run_is_bit_deterministic():
    cfg = CrowdConfig(
        n=100,
        a=0.01,
        agents=homogeneous_agents(100, 0.0, 0.5, 1.0, noise_amp=0.05),
        noise_model=UniformNoise(0.05),
    )
    rule = SwitchRule(saturation_scale=0.5)
    prof = step_profile(40, 1.0, 5)
    r1 = run(cfg, rule, prof, seed=123)
    r2 = run(cfg, rule, prof, seed=123)
    assert np.array_equal(r1.dO, r2.dO)
    assert np.array_equal(r1.dS, r2.dS)
    assert np.array_equal(r1.n_reactive, r2.n_reactive)
    assert np.array_equal(r1.agent_actions, r2.agent_actions)
    r3 = run(cfg, rule, prof, seed=124)
    assert not np.array_equal(r1.dO, r3.dO)


def test_wiener_noise_preserves_record_invariants():
    cfg = simple_config(n=10, noise_model=WienerNoise(mu=0.01, sigma=0.1))
    result = run(cfg, SwitchRule(saturation_scale=1.0), zero_profile(50), seed=7)
    for k in range(result.steps_run):
        rec = result.record(k)
        assert rec.dO == cfg.a * rec.dS
    assert np.any(result.dO != 0.0)


def test_divergence_truncates_and_marks():
    cfg = simple_config(b_high=1.5)  # peak gain 1.5
    rule = SwitchRule(saturation_scale=0.2)
    result = run(cfg, rule, step_profile(500, 1.0, 0), divergence_ceiling=1e6)
    assert result.diverged
    assert result.truncated_at == result.steps_run - 1
    assert abs(result.O[-1]) > 1e6
    assert abs(result.O[-2]) <= 1e6
    assert result.stability_trace[-1] is Stability.AMPLIFYING


def test_pinned_reactive_bypasses_rule():
    cfg = simple_config(b_high=1.0)
    result = run(cfg, SwitchRule(saturation_scale=1e9), zero_profile(20),
                 pinned_reactive=30, initial_dO=1.0)
    assert np.all(result.n_reactive == 30)
    # gain 0.3: geometric decay from the seeded increment
    assert result.dO[0] == pytest.approx(0.3, rel=1e-12)
    assert result.dO[5] == pytest.approx(0.3 ** 6, rel=1e-9)


def test_metric_windows_nonoverlapping_and_overlapping():
    spec = golden_scenario("fig4-stable")
    result = run_spec(spec)
    assert len(result.summary) == 80 // 20
    assert [w.start for w in result.summary] == [0, 20, 40, 60]
    overlapping = run_spec(spec, overlap=True)
    assert len(overlapping.summary) == 80 - 20 + 1


def test_record_agents_off_skips_window_reports():
    cfg = simple_config()
    result = run(cfg, SwitchRule(saturation_scale=0.5), step_profile(30, 1.0, 2),
                 record_agents=False, metric_window=10)
    assert result.agent_actions is None
    assert result.summary == []
    summary = summarize(result)
    assert math.isnan(summary.rho_c)


# ---------------------------------------------------------------------------
# golden regimes (full assertions live in the acceptance suite)
# ---------------------------------------------------------------------------

def test_golden_names_and_unknown():
    for name in GOLDEN_NAMES:
        assert golden_scenario(name).name == name
    with pytest.raises(ValueError):
        golden_scenario("fig7-mystery")


def test_golden_regimes_qualitative():
    stable = run_spec(golden_scenario("fig4-stable"))
    assert not stable.diverged and stable.final_ratio == 0.0

    unstable = run_spec(golden_scenario("fig5-unstable"))
    assert unstable.diverged and unstable.peak_ratio == 1.0

    bubble = run_spec(golden_scenario("fig6-bubble"))
    assert not bubble.diverged
    assert bubble.O.max() > bubble.O[-1] > 0.0


# ---------------------------------------------------------------------------
# forced-ratio experiments
# ---------------------------------------------------------------------------

def test_forced_ratio_fully_reactive_noiseless():
    cfg = simple_config(n=50, b_high=1.0)
    assert forced_ratio_run(cfg, 1.0) == 1.0


def test_forced_ratio_zero_with_symmetric_normals_decays_with_n():
    n = 10_000
    signs = make_generator(8).choice([-1.0, 1.0], n)
    agents = [AgentParams(i, 0.2 * float(signs[i]), 1.0, 1.0) for i in range(n)]
    cfg = CrowdConfig(n=n, a=0.001, agents=agents)
    assert forced_ratio_run(cfg, 0.0, seed=3) < 0.05


def test_forced_ratio_half_matches_closed_form():
    n = 10_000
    signs = make_generator(9).choice([-1.0, 1.0], n)
    agents = [AgentParams(i, 0.2 * float(signs[i]), 1.0, 1.0) for i in range(n)]
    cfg = CrowdConfig(n=n, a=0.001, agents=agents)
    simulated = forced_ratio_run(cfg, 0.5, seed=4)
    b_low_avg = float(np.mean([ag.b_low for ag in agents]))
    assert simulated == pytest.approx(
        order_parameter_closed_form(0.5, 1.0, b_low_avg, 0.2), abs=0.02
    )
    assert simulated == pytest.approx(0.8333, abs=0.02)


def test_forced_ratio_validation():
    cfg = simple_config(n=10)
    with pytest.raises(ValueError):
        forced_ratio_run(cfg, 1.5)
    with pytest.raises(ValueError):
        forced_ratio_run(cfg, 0.5, trials=0)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def test_sweep_empty_values():
    cfg = simple_config()
    assert sweep(cfg, SwitchRule(saturation_scale=1.0), "a", [], zero_profile(10)) == []


def test_sweep_unknown_param_lists_valid_names():
    cfg = simple_config()
    with pytest.raises(ValueError, match="saturation_scale"):
        sweep(cfg, SwitchRule(saturation_scale=1.0), "bogus", [1.0], zero_profile(10))


def test_sweep_orders_results_and_records_seeds():
    cfg = simple_config()
    rule = SwitchRule(saturation_scale=0.5)
    prof = step_profile(40, 1.0, 5)
    points = sweep(cfg, rule, "b_high", [0.2, 0.5, 0.8], prof, seed_policy="per-value", seed=10)
    assert [p.value for p in points] == [0.2, 0.5, 0.8]
    assert [p.seed for p in points] == [10, 11, 12]
    # stronger coupling holds the reactive phase longer
    assert points[0].summary.peak_ratio <= points[-1].summary.peak_ratio


def test_sweep_over_population_size_rebuilds_agents():
    cfg = simple_config(n=10)
    new_cfg, _ = apply_sweep_value(cfg, SwitchRule(saturation_scale=1.0), "n", 25)
    assert new_cfg.n == 25 and len(new_cfg.agents) == 25
    assert new_cfg.agents[24].b_high == cfg.agents[0].b_high


def test_sweep_parallel_matches_serial():
    cfg = simple_config()
    rule = SwitchRule(saturation_scale=0.5)
    prof = step_profile(30, 1.0, 5)
    serial = sweep(cfg, rule, "a", [0.005, 0.01], prof)
    parallel = sweep(cfg, rule, "a", [0.005, 0.01], prof, jobs=2)
    for s, p in zip(serial, parallel):
        assert s.summary == p.summary
