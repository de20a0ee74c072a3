"""Full simulations: force profiles, the canonical step loop, sweeps.

The step loop composes the other modules in a fixed causal order. For
each step t:

  1. the switch rule sets the reactive count from the trailing |dO|
     window ending at the previous step,
  2. agents respond to this step's force increment dE(t) and the
     previous observation increment (the one-step delayed feedback),
  3. actions aggregate in ascending agent order, the observation
     updates (dO = a*dS), and the step is recorded.

Runs are single-threaded and bit-deterministic per (config, rule,
profile, seed). Amplifying configurations are expected to blow up;
a run truncates once |O| crosses the divergence ceiling and is marked
diverged rather than failing.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dynamics import (
    AgentParams,
    CrowdConfig,
    NoNoise,
    StepRecord,
    UniformNoise,
    WienerNoise,
    homogeneous_agents,
    ordered_sum,
)
from .metrics import SyncReport, sync_report, trendiness
from .rng import make_generator
from .switching import (
    Stability,
    SwitchRule,
    classify_stability,
    switch_priority,
    update_reactive_count,
)

PROFILE_KINDS = ("zero", "step", "ramp", "bubble", "explicit")
SWEEP_PARAMS = ("a", "b_high", "b_low", "n", "noise_amp", "saturation_scale")

DEFAULT_DIVERGENCE_CEILING = 1e12


# ---------------------------------------------------------------------------
# External-force profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForceProfile:
    """A deterministic series of external-force increments dE(t)."""

    kind: str
    length: int
    increments: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.increments.shape != (self.length,):
            raise ValueError(
                f"profile must emit exactly {self.length} increments, got {self.increments.shape}"
            )


def zero_profile(length: int) -> ForceProfile:
    """No external force at all."""
    _check_length(length)
    return ForceProfile("zero", length, np.zeros(length))


def step_profile(length: int, height: float, onset: int) -> ForceProfile:
    """A single permanent level shift: dE = height at `onset`, 0 elsewhere."""
    _check_length(length)
    if not 0 <= onset < length:
        raise ValueError(f"onset {onset} outside [0, {length})")
    inc = np.zeros(length)
    inc[onset] = height
    return ForceProfile("step", length, inc, {"height": height, "onset": onset})


def ramp_profile(length: int, slope: float, start: int, end: int) -> ForceProfile:
    """Constant increments `slope` for steps in [start, end)."""
    _check_length(length)
    if not 0 <= start < length:
        raise ValueError(f"start {start} outside [0, {length})")
    if not start < end <= length:
        raise ValueError(f"end {end} outside ({start}, {length}]")
    inc = np.zeros(length)
    inc[start:end] = slope
    return ForceProfile("ramp", length, inc, {"slope": slope, "start": start, "end": end})


def bubble_profile(
    length: int,
    build_slope: float,
    peak_step: int,
    crash_slope: float,
    stabilize_step: int,
    confusion_scale: float = 0.0,
    confusion_decay: float = 0.7,
    confusion_wobble: float = 0.35,
) -> ForceProfile:
    """A story that builds, gets invalidated, and noisily settles.

    Positive increments `build_slope` on [0, peak_step), the crash
    `crash_slope` (negative) on [peak_step, stabilize_step), then an
    optional deterministic damped-alternation tail ("confusion") whose
    increments sum to confusion_scale * |crash total|, then zeros. The
    tail is what lets a marginally-coupled crowd (loop gain pinned at 1)
    shed its momentum: with gain exactly 1 the observation increment is
    preserved forever, so only opposing external increments can unlock
    the feedback loop.
    """
    _check_length(length)
    if not 0 < peak_step < length:
        raise ValueError(f"peak_step {peak_step} outside (0, {length})")
    if not peak_step < stabilize_step < length:
        raise ValueError(f"stabilize_step {stabilize_step} outside ({peak_step}, {length})")
    if not build_slope > 0:
        raise ValueError(f"build_slope must be > 0, got {build_slope}")
    if not crash_slope < 0:
        raise ValueError(f"crash_slope must be < 0, got {crash_slope}")
    if not 0.0 <= confusion_scale < 1.0:
        raise ValueError(f"confusion_scale must be in [0, 1), got {confusion_scale}")
    if not 0.0 < confusion_decay < 1.0:
        raise ValueError(f"confusion_decay must be in (0, 1), got {confusion_decay}")
    if not 0.0 <= confusion_wobble < 1.0:
        raise ValueError(f"confusion_wobble must be in [0, 1), got {confusion_wobble}")
    inc = np.zeros(length)
    inc[:peak_step] = build_slope
    inc[peak_step:stabilize_step] = crash_slope
    if confusion_scale > 0.0:
        crash_total = crash_slope * (stabilize_step - peak_step)
        target = confusion_scale * abs(crash_total)
        q, w = confusion_decay, confusion_wobble
        # sum of s*q^j*(1 + w*(-1)^j) over j >= 0 is s*(1/(1-q) + w/(1+q))
        s = target / (1.0 / (1.0 - q) + w / (1.0 + q))
        j = np.arange(length - stabilize_step, dtype=np.float64)
        inc[stabilize_step:] = s * q**j * (1.0 + w * np.where(j % 2 == 0, 1.0, -1.0))
    return ForceProfile(
        "bubble",
        length,
        inc,
        {
            "build_slope": build_slope,
            "peak_step": peak_step,
            "crash_slope": crash_slope,
            "stabilize_step": stabilize_step,
            "confusion_scale": confusion_scale,
            "confusion_decay": confusion_decay,
            "confusion_wobble": confusion_wobble,
        },
    )


def explicit_profile(length: int, series: Sequence[float]) -> ForceProfile:
    """Caller-supplied increments, verbatim."""
    _check_length(length)
    arr = np.asarray(series, dtype=np.float64)
    if arr.shape != (length,):
        raise ValueError(f"explicit series must have {length} entries, got {arr.shape}")
    return ForceProfile("explicit", length, arr, {"series": [float(x) for x in arr]})


def build_profile(kind: str, params: dict, length: int) -> ForceProfile:
    """Dispatch to the named profile builder."""
    if kind == "zero":
        return zero_profile(length)
    if kind == "step":
        return step_profile(length, **params)
    if kind == "ramp":
        return ramp_profile(length, **params)
    if kind == "bubble":
        return bubble_profile(length, **params)
    if kind == "explicit":
        return explicit_profile(length, **params)
    raise ValueError(f"unknown profile kind {kind!r}; valid kinds: {', '.join(PROFILE_KINDS)}")


def _check_length(length: int) -> None:
    if length < 1:
        raise ValueError(f"profile length must be >= 1, got {length}")


# ---------------------------------------------------------------------------
# Scenario spec and result
# ---------------------------------------------------------------------------

@dataclass
class ScenarioSpec:
    """Everything needed to reproduce one run."""

    name: str
    config: CrowdConfig
    rule: SwitchRule
    profile: ForceProfile
    steps: int
    seed: int = 0
    metric_window: int | None = None
    overlap: bool = False
    divergence_ceiling: float = DEFAULT_DIVERGENCE_CEILING

    def __post_init__(self) -> None:
        if self.steps != self.profile.length:
            raise ValueError(
                f"run steps ({self.steps}) must match profile length ({self.profile.length})"
            )


@dataclass
class ScenarioResult:
    """Trajectory of one run, as parallel arrays plus window summaries.

    Arrays cover the steps actually executed; a diverged run stops at
    `truncated_at` (inclusive). `agent_actions` is the N x steps matrix
    of per-agent increments, or None when recording was off.
    """

    config: CrowdConfig
    rule: SwitchRule
    profile: ForceProfile
    seed: int
    t: np.ndarray
    dE: np.ndarray
    E: np.ndarray
    dS: np.ndarray
    S: np.ndarray
    dO: np.ndarray
    O: np.ndarray
    n_reactive: np.ndarray
    b_total: np.ndarray
    ab: np.ndarray
    r_instant: np.ndarray
    stability_trace: list[Stability]
    agent_actions: np.ndarray | None
    summary: list[SyncReport]
    peak_ratio: float
    final_ratio: float
    diverged: bool
    truncated_at: int | None

    @property
    def steps_run(self) -> int:
        return len(self.t)

    @property
    def ratio(self) -> np.ndarray:
        return self.n_reactive / self.config.n

    def record(self, k: int) -> StepRecord:
        """Materialize step k as a StepRecord."""
        actions = self.agent_actions[:, k] if self.agent_actions is not None else None
        return StepRecord(
            t=int(self.t[k]),
            dE=float(self.dE[k]),
            agent_actions=actions,
            dS=float(self.dS[k]),
            dO=float(self.dO[k]),
            O=float(self.O[k]),
            n_reactive=int(self.n_reactive[k]),
            b_total=float(self.b_total[k]),
            ab=float(self.ab[k]),
        )

    @property
    def records(self) -> list[StepRecord]:
        return [self.record(k) for k in range(self.steps_run)]


# ---------------------------------------------------------------------------
# The canonical loop
# ---------------------------------------------------------------------------

def run(
    config: CrowdConfig,
    rule: SwitchRule,
    profile: ForceProfile,
    seed: int = 0,
    *,
    record_agents: bool = True,
    metric_window: int | None = None,
    overlap: bool = False,
    divergence_ceiling: float = DEFAULT_DIVERGENCE_CEILING,
    pinned_reactive: int | None = None,
    initial_dO: float = 0.0,
) -> ScenarioResult:
    """Execute the canonical step loop for the profile's full length.

    `pinned_reactive` bypasses the switch rule and holds the reactive
    count fixed (threshold experiments); `initial_dO` seeds the
    endogenous feedback with a nonzero observation increment.

    Noise models: per-agent uniform noise enters each agent's action;
    aggregate drift+diffusion noise enters the observation update and is
    attributed equally across agents so dS = sum dS_i and dO = a*dS stay
    exact. With no noise the generator is never consumed.
    """
    n, a, dt = config.n, config.a, config.dt
    if pinned_reactive is not None and not 0 <= pinned_reactive <= n:
        raise ValueError(f"pinned_reactive={pinned_reactive} outside [0, {n}]")
    b_low = np.array([ag.b_low for ag in config.agents])
    b_high = np.array([ag.b_high for ag in config.agents])
    c_vec = np.array([ag.c for ag in config.agents])
    amp = np.array([ag.noise_amp for ag in config.agents])
    rank = np.empty(n, dtype=np.intp)
    rank[switch_priority(config.agents)] = np.arange(n)

    model = config.noise_model
    uniform = isinstance(model, UniformNoise)
    wiener = isinstance(model, WienerNoise)
    rng = make_generator(seed)

    T = profile.length
    dE_arr = profile.increments
    out_dS = np.zeros(T)
    out_dO = np.zeros(T)
    out_O = np.zeros(T)
    out_nh = np.zeros(T, dtype=np.intp)
    out_b = np.zeros(T)
    out_ab = np.zeros(T)
    out_r = np.zeros(T)
    actions = np.zeros((n, T)) if record_agents else None

    history: deque[float] = deque(maxlen=rule.window)
    dO_prev = initial_dO
    O = 0.0
    diverged = False
    truncated_at: int | None = None
    steps_run = T

    for t in range(T):
        if pinned_reactive is not None:
            n_h = pinned_reactive
        else:
            n_h = update_reactive_count(history, rule, n)
        b_eff = np.where(rank < n_h, b_high, b_low)
        b_tot = ordered_sum(b_eff)
        dE = float(dE_arr[t])
        ds_i = c_vec * dE + b_eff * dO_prev
        if uniform:
            ds_i += rng.uniform(-1.0, 1.0, n) * amp
        elif wiener:
            agg_eps = model.mu * dt + model.sigma * math.sqrt(dt) * float(rng.standard_normal())
            ds_i = ds_i + agg_eps / (a * n)
        dS = ordered_sum(ds_i)
        dO = a * dS
        denom = ordered_sum(np.abs(ds_i))
        O += dO

        out_dS[t] = dS
        out_dO[t] = dO
        out_O[t] = O
        out_nh[t] = n_h
        out_b[t] = b_tot
        out_ab[t] = a * b_tot
        out_r[t] = abs(dS) / denom if denom > 0.0 else 0.0
        if actions is not None:
            actions[:, t] = ds_i

        history.append(dO)
        dO_prev = dO
        if abs(O) > divergence_ceiling:
            diverged = True
            truncated_at = t
            steps_run = t + 1
            break

    sl = slice(0, steps_run)
    result = ScenarioResult(
        config=config,
        rule=rule,
        profile=profile,
        seed=seed,
        t=np.arange(steps_run),
        dE=dE_arr[sl].copy(),
        E=np.cumsum(dE_arr[sl]),
        dS=out_dS[sl],
        S=np.cumsum(out_dS[sl]),
        dO=out_dO[sl],
        O=out_O[sl],
        n_reactive=out_nh[sl],
        b_total=out_b[sl],
        ab=out_ab[sl],
        r_instant=out_r[sl],
        stability_trace=[classify_stability(x) for x in out_ab[sl]],
        agent_actions=actions[:, sl] if actions is not None else None,
        summary=[],
        peak_ratio=float(out_nh[sl].max()) / n if steps_run else 0.0,
        final_ratio=float(out_nh[steps_run - 1]) / n if steps_run else 0.0,
        diverged=diverged,
        truncated_at=truncated_at,
    )
    result.summary = _window_reports(result, metric_window, overlap)
    return result


def _window_reports(
    result: ScenarioResult, metric_window: int | None, overlap: bool
) -> list[SyncReport]:
    """Per-window metric reports; needs recorded agent actions."""
    if result.agent_actions is None or result.steps_run == 0:
        return []
    T = result.steps_run
    w = metric_window if metric_window is not None else T
    w = min(w, T)
    if w < 1:
        return []
    starts = range(0, T - w + 1) if overlap else range(0, T - w + 1, w)
    return [
        sync_report(
            result.agent_actions[:, s : s + w],
            result.dO[s : s + w],
            result.config.a,
            start=s,
            r_instant=result.r_instant[s : s + w],
        )
        for s in starts
    ]


def run_spec(spec: ScenarioSpec, seed: int | None = None, **overrides) -> ScenarioResult:
    """Run a parsed or golden scenario; keyword overrides win over the spec."""
    kwargs = {
        "metric_window": spec.metric_window,
        "overlap": spec.overlap,
        "divergence_ceiling": spec.divergence_ceiling,
    }
    kwargs.update(overrides)
    return run(spec.config, spec.rule, spec.profile, spec.seed if seed is None else seed, **kwargs)


def aggregate_trajectory(
    a: float,
    b_total: float,
    c_total: float,
    dE: Sequence[float] | np.ndarray,
    dO0: float = 0.0,
) -> np.ndarray:
    """Fast aggregate-path recursion dO(t+1) = a*C*dE(t) + a*B*dO(t).

    Fixed coupling, no noise; returns the dO series. Must agree with the
    per-agent loop at matching coupling (tested).
    """
    dE = np.asarray(dE, dtype=np.float64)
    out = np.empty(dE.shape[0])
    dO = dO0
    ac = a * c_total
    ab = a * b_total
    for t in range(dE.shape[0]):
        dO = ac * dE[t] + ab * dO
        out[t] = dO
    return out


# ---------------------------------------------------------------------------
# Forced-ratio experiments (order-parameter curves)
# ---------------------------------------------------------------------------

def forced_ratio_samples(
    config: CrowdConfig,
    ratio: float,
    dO_drive: float = 1.0,
    noise_amp: float = 0.0,
    trials: int = 1,
    seed: int = 0,
    _block: int = 2_000_000,
) -> np.ndarray:
    """Order parameter of one driven step at a pinned reactive fraction.

    Bypasses the switch rule: the first round(ratio*N) agents in switch
    priority are reactive, the rest normal. Each trial drives one step
    with observation increment `dO_drive`, zero external force, and
    i.i.d. uniform noise of half-width `noise_amp`; returns the
    per-trial order parameters.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must be in [0, 1], got {ratio}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    n = config.n
    n_h = min(int(math.floor(ratio * n + 0.5)), n)
    b_low = np.array([ag.b_low for ag in config.agents])
    b_high = np.array([ag.b_high for ag in config.agents])
    rank = np.empty(n, dtype=np.intp)
    rank[switch_priority(config.agents)] = np.arange(n)
    base = np.where(rank < n_h, b_high, b_low) * dO_drive

    rng = make_generator(seed)
    out = np.empty(trials)
    per_block = max(1, _block // n)
    done = 0
    while done < trials:
        k = min(per_block, trials - done)
        acts = base + rng.uniform(-noise_amp, noise_amp, size=(k, n))
        sums = np.abs(acts.sum(axis=1))
        denoms = np.abs(acts).sum(axis=1)
        blk = np.zeros(k)
        np.divide(sums, denoms, out=blk, where=denoms > 0)
        out[done : done + k] = blk
        done += k
    return np.clip(out, 0.0, 1.0)


def forced_ratio_run(
    config: CrowdConfig,
    ratio: float,
    dO_drive: float = 1.0,
    noise_amp: float = 0.0,
    trials: int = 1,
    seed: int = 0,
) -> float:
    """Mean order parameter over trials at a pinned reactive fraction."""
    return float(forced_ratio_samples(config, ratio, dO_drive, noise_amp, trials, seed).mean())


# ---------------------------------------------------------------------------
# Run summaries and parameter sweeps
# ---------------------------------------------------------------------------

@dataclass
class RunSummary:
    """One-row digest of a run, the unit emitted by sweeps and the CLI."""

    name: str
    steps_run: int
    diverged: bool
    truncated_at: int | None
    seed: int
    peak_O: float
    final_O: float
    peak_ratio: float
    final_ratio: float
    mean_R: float
    rho_c: float
    sigma_c: float
    sigma_o: float
    t_d: float
    stability_final: Stability


def summarize(result: ScenarioResult, name: str = "") -> RunSummary:
    """Digest a result: whole-run metrics plus divergence bookkeeping."""
    if result.steps_run == 0:
        raise ValueError("cannot summarize an empty run")
    a = result.config.a
    if result.agent_actions is not None:
        report = sync_report(
            result.agent_actions, result.dO, a, start=0, r_instant=result.r_instant
        )
        rho_c, sigma_c, sigma_o = report.rho_c, report.sigma_c, report.sigma_o
    else:
        sigma_o = float(np.std(result.dO))
        sigma_c = sigma_o / a
        rho_c = float("nan")
    return RunSummary(
        name=name,
        steps_run=result.steps_run,
        diverged=result.diverged,
        truncated_at=result.truncated_at,
        seed=result.seed,
        peak_O=float(result.O.max()),
        final_O=float(result.O[-1]),
        peak_ratio=result.peak_ratio,
        final_ratio=result.final_ratio,
        mean_R=float(result.r_instant.mean()),
        rho_c=rho_c,
        sigma_c=sigma_c,
        sigma_o=sigma_o,
        t_d=trendiness(result.dO) if np.any(result.dO != 0) else 0.0,
        stability_final=result.stability_trace[-1],
    )


@dataclass
class SweepPoint:
    value: float
    seed: int
    summary: RunSummary


def apply_sweep_value(
    config: CrowdConfig, rule: SwitchRule, param: str, value: float
) -> tuple[CrowdConfig, SwitchRule]:
    """Return (config, rule) with one named parameter overridden.

    Population-wide parameters (b_high, b_low, noise_amp) are set on
    every agent; resizing n rebuilds a homogeneous population from
    agent 0's coefficients.
    """
    if param not in SWEEP_PARAMS:
        raise ValueError(
            f"unknown sweep parameter {param!r}; valid: {', '.join(SWEEP_PARAMS)}"
        )
    if param == "saturation_scale":
        return config, replace(rule, saturation_scale=float(value))
    if param == "a":
        return replace(config, a=float(value)), rule
    if param == "n":
        tmpl = config.agents[0]
        agents = homogeneous_agents(int(value), tmpl.b_low, tmpl.b_high, tmpl.c, tmpl.noise_amp)
        return replace(config, n=int(value), agents=agents), rule
    field_name = {"b_high": "b_high", "b_low": "b_low", "noise_amp": "noise_amp"}[param]
    agents = [replace(ag, **{field_name: float(value)}) for ag in config.agents]
    return replace(config, agents=agents), rule


def _sweep_one(args) -> SweepPoint:
    config, rule, param, value, profile, seed, ceiling = args
    cfg, rl = apply_sweep_value(config, rule, param, value)
    result = run(cfg, rl, profile, seed, divergence_ceiling=ceiling)
    return SweepPoint(value=float(value), seed=seed, summary=summarize(result, name=f"{param}={value}"))


def sweep(
    config: CrowdConfig,
    rule: SwitchRule,
    param: str,
    values: Sequence[float],
    profile: ForceProfile,
    seed_policy: str = "fixed",
    seed: int = 0,
    jobs: int = 1,
    divergence_ceiling: float = DEFAULT_DIVERGENCE_CEILING,
) -> list[SweepPoint]:
    """One independent run per value; summaries in input order.

    seed_policy "fixed" reuses `seed` for every run; "per-value" uses
    seed + index. The seed actually used is recorded on each point.
    """
    if seed_policy not in ("fixed", "per-value"):
        raise ValueError(f"seed_policy must be 'fixed' or 'per-value', got {seed_policy!r}")
    if param not in SWEEP_PARAMS:
        raise ValueError(
            f"unknown sweep parameter {param!r}; valid: {', '.join(SWEEP_PARAMS)}"
        )
    seeds = [seed if seed_policy == "fixed" else seed + i for i in range(len(values))]
    tasks = [
        (config, rule, param, v, profile, s, divergence_ceiling)
        for v, s in zip(values, seeds)
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_one, tasks))
    return [_sweep_one(t) for t in tasks]


# ---------------------------------------------------------------------------
# Golden scenarios: the three regression-locked regimes
# ---------------------------------------------------------------------------

GOLDEN_NAMES = ("fig4-stable", "fig5-unstable", "fig6-bubble")


def golden_scenario(name: str) -> ScenarioSpec:
    """Named reference scenarios for the three coupling regimes.

    fig4-stable: peak loop gain 0.5; a step of news excites the crowd,
    which relaxes back to fully normal once the force stabilizes.
    fig5-unstable: peak loop gain 1.35; the same step tips the crowd
    past its critical reactive count and it self-amplifies (diverges).
    fig6-bubble: peak loop gain exactly 1; a build-crash-confusion story
    inflates a bubble that crashes and settles at a lower level.
    """
    if name == "fig4-stable":
        return ScenarioSpec(
            name=name,
            config=CrowdConfig(n=100, a=0.01, agents=homogeneous_agents(100, 0.0, 0.5, 1.0)),
            rule=SwitchRule(saturation_scale=0.54, window=5),
            profile=step_profile(80, height=1.0, onset=10),
            steps=80,
            seed=0,
            metric_window=20,
        )
    if name == "fig5-unstable":
        return ScenarioSpec(
            name=name,
            config=CrowdConfig(n=100, a=0.01, agents=homogeneous_agents(100, 0.0, 1.35, 1.0)),
            rule=SwitchRule(saturation_scale=0.26, window=5),
            profile=step_profile(150, height=1.0, onset=10),
            steps=150,
            seed=0,
            metric_window=25,
        )
    if name == "fig6-bubble":
        return ScenarioSpec(
            name=name,
            config=CrowdConfig(n=100, a=0.01, agents=homogeneous_agents(100, 0.0, 1.0, 1.0)),
            rule=SwitchRule(saturation_scale=0.25, window=5),
            profile=bubble_profile(
                240,
                build_slope=0.05,
                peak_step=150,
                crash_slope=-0.4,
                stabilize_step=155,
                confusion_scale=0.85,
                confusion_decay=0.7,
                confusion_wobble=0.35,
            ),
            steps=240,
            seed=0,
            metric_window=30,
        )
    raise ValueError(f"unknown golden scenario {name!r}; valid: {', '.join(GOLDEN_NAMES)}")
