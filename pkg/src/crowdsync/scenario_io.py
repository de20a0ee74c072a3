"""Scenario files and result tables.

Scenario files are flat UTF-8 key-value text (``key = value``, ``#``
comments) with section prefixes crowd.*, rule.*, profile.*, run.*.
Parsing validates everything and reports every problem at once with
line numbers; emission produces a canonical form that is stable under
re-parsing. Result tables are comma-separated with fixed headers and
floats printed to 17 significant digits so every value round-trips.
"""

from __future__ import annotations

import csv
import difflib
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dynamics import (
    AgentParams,
    CrowdConfig,
    CrowdError,
    NoNoise,
    UniformNoise,
    WienerNoise,
)
from .scenarios import (
    DEFAULT_DIVERGENCE_CEILING,
    ForceProfile,
    RunSummary,
    ScenarioResult,
    ScenarioSpec,
    SweepPoint,
    build_profile,
)
from .switching import SwitchRule

TABLE_COLUMNS = ["t", "E", "dE", "S", "dS", "O", "dO", "N_H", "ratio", "B", "AB", "R", "stability"]

SUMMARY_COLUMNS = [
    "name", "steps_run", "diverged", "truncated_at", "seed",
    "peak_O", "final_O", "peak_ratio", "final_ratio",
    "mean_R", "rho_c", "sigma_c", "sigma_o", "t_d", "stability_final",
]

CURVE_COLUMNS = ["x", "mean_R", "stderr_R"]

_CROWD_KEYS = {"n", "a", "b_low", "b_high", "c", "noise_amp", "noise", "mu", "sigma", "dt"}
_RULE_KEYS = {"window", "saturation_scale"}
_PROFILE_KEYS = {
    "kind", "height", "onset", "slope", "start", "end",
    "build_slope", "peak_step", "crash_slope", "stabilize_step",
    "confusion_scale", "confusion_decay", "confusion_wobble", "series",
}
_RUN_KEYS = {"steps", "seed", "metric_window", "overlap", "divergence_ceiling"}

_PROFILE_PARAM_KEYS = {
    "zero": set(),
    "step": {"height", "onset"},
    "ramp": {"slope", "start", "end"},
    "bubble": {
        "build_slope", "peak_step", "crash_slope", "stabilize_step",
        "confusion_scale", "confusion_decay", "confusion_wobble",
    },
    "explicit": {"series"},
}
_PROFILE_INT_PARAMS = {"onset", "start", "end", "peak_step", "stabilize_step"}

_ALL_KEYS = (
    {"name"}
    | {f"crowd.{k}" for k in _CROWD_KEYS}
    | {f"rule.{k}" for k in _RULE_KEYS}
    | {f"profile.{k}" for k in _PROFILE_KEYS}
    | {f"run.{k}" for k in _RUN_KEYS}
)


class ScenarioFormatError(CrowdError):
    """All validation problems found in one scenario file."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid scenario:\n  " + "\n  ".join(errors))


@dataclass
class _RawScenario:
    """Key -> (line number, raw value text)."""

    entries: dict[str, tuple[int, str]]


def _tokenize(text: str) -> tuple[_RawScenario, list[str]]:
    entries: dict[str, tuple[int, str]] = {}
    errors: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key in entries:
            errors.append(f"line {lineno}: duplicate key {key!r} (first set at line {entries[key][0]})")
            continue
        if key not in _ALL_KEYS:
            hint = difflib.get_close_matches(key, sorted(_ALL_KEYS), n=1)
            suffix = f"; did you mean {hint[0]!r}?" if hint else ""
            errors.append(f"line {lineno}: unknown key {key!r}{suffix}")
            continue
        entries[key] = (lineno, value)
    return _RawScenario(entries), errors


class _Reader:
    """Typed access to raw entries, accumulating errors instead of raising."""

    def __init__(self, raw: _RawScenario, errors: list[str]):
        self.raw = raw
        self.errors = errors
        self.used: set[str] = set()

    def has(self, key: str) -> bool:
        return key in self.raw.entries

    def _take(self, key: str) -> tuple[int, str] | None:
        self.used.add(key)
        return self.raw.entries.get(key)

    def fail(self, key: str, msg: str) -> None:
        entry = self.raw.entries.get(key)
        where = f"line {entry[0]}: " if entry else ""
        self.errors.append(f"{where}{key}: {msg}")

    def str_(self, key: str, default: str | None = None, choices: Iterable[str] | None = None):
        entry = self._take(key)
        if entry is None:
            if default is None:
                self.errors.append(f"missing required key {key!r}")
            return default
        value = entry[1]
        if choices is not None and value not in choices:
            self.fail(key, f"must be one of {', '.join(choices)}; got {value!r}")
            return default
        return value

    def int_(self, key: str, default: int | None = None, minimum: int | None = None):
        entry = self._take(key)
        if entry is None:
            if default is None and minimum is not None:
                self.errors.append(f"missing required key {key!r}")
            return default
        try:
            value = int(entry[1])
        except ValueError:
            self.fail(key, f"expected an integer, got {entry[1]!r}")
            return default
        if minimum is not None and value < minimum:
            self.fail(key, f"must be >= {minimum}, got {value}")
            return default
        return value

    def float_(self, key: str, default: float | None = None, required: bool = False):
        entry = self._take(key)
        if entry is None:
            if required:
                self.errors.append(f"missing required key {key!r}")
            return default
        try:
            return float(entry[1])
        except ValueError:
            self.fail(key, f"expected a number, got {entry[1]!r}")
            return default

    def bool_(self, key: str, default: bool) -> bool:
        entry = self._take(key)
        if entry is None:
            return default
        text = entry[1].lower()
        if text in ("true", "yes", "1"):
            return True
        if text in ("false", "no", "0"):
            return False
        self.fail(key, f"expected true/false, got {entry[1]!r}")
        return default

    def float_list(self, key: str, n: int | None, default: float | None = None, required: bool = False):
        """A scalar (expanded to n copies) or a comma list of exactly n values."""
        entry = self._take(key)
        if entry is None:
            if required:
                self.errors.append(f"missing required key {key!r}")
                return None
            return None if default is None else [default] * (n or 0)
        parts = [p.strip() for p in entry[1].split(",")]
        try:
            values = [float(p) for p in parts]
        except ValueError:
            self.fail(key, f"expected a number or comma-separated numbers, got {entry[1]!r}")
            return None
        if len(values) == 1 and n is not None:
            return values * n
        if n is not None and len(values) != n:
            self.fail(key, f"expected 1 or {n} values, got {len(values)}")
            return None
        return values


def parse_scenario(text: str) -> ScenarioSpec:
    """Parse and fully validate a scenario file.

    Raises ScenarioFormatError carrying every problem found, each with
    its line number where one applies.
    """
    raw, errors = _tokenize(text)
    r = _Reader(raw, errors)

    name = r.str_("name", default="scenario")
    n = r.int_("crowd.n", minimum=1)
    a = r.float_("crowd.a", required=True)
    if a is not None and not a > 0:
        r.fail("crowd.a", f"observation sensitivity must be > 0, got {a}")
        a = None
    dt = r.float_("crowd.dt", default=1.0)
    if dt is not None and not dt > 0:
        r.fail("crowd.dt", f"must be > 0, got {dt}")
        dt = None

    b_low = r.float_list("crowd.b_low", n, required=True)
    b_high = r.float_list("crowd.b_high", n, required=True)
    c = r.float_list("crowd.c", n, required=True)
    noise_amp = r.float_list("crowd.noise_amp", n, default=0.0)

    noise_kind = r.str_("crowd.noise", default="none", choices=("none", "uniform", "wiener"))
    mu = r.float_("crowd.mu", default=0.0)
    sigma = r.float_("crowd.sigma", default=0.0)

    agents: list[AgentParams] | None = None
    if n is not None and None not in (b_low, b_high, c, noise_amp):
        agents = []
        for i in range(n):
            if not b_high[i] > b_low[i]:
                r.fail(
                    "crowd.b_high",
                    f"agent {i}: b_high must exceed b_low (got b_high={b_high[i]}, b_low={b_low[i]})",
                )
                agents = None
                break
            if not b_high[i] > 0:
                r.fail("crowd.b_high", f"agent {i}: b_high must be > 0, got {b_high[i]}")
                agents = None
                break
            if noise_amp[i] < 0:
                r.fail("crowd.noise_amp", f"agent {i}: must be >= 0, got {noise_amp[i]}")
                agents = None
                break
            agents.append(AgentParams(i, b_low[i], b_high[i], c[i], noise_amp[i]))

    noise_model = None
    if noise_kind == "none":
        noise_model = NoNoise()
    elif noise_kind == "uniform":
        if noise_amp is not None:
            noise_model = UniformNoise(half_width=max(noise_amp))
    elif noise_kind == "wiener":
        if sigma is not None and sigma < 0:
            r.fail("crowd.sigma", f"must be >= 0, got {sigma}")
        elif mu is not None and sigma is not None:
            noise_model = WienerNoise(mu=mu, sigma=sigma)

    window = r.int_("rule.window", default=5, minimum=1)
    sat = r.float_("rule.saturation_scale", required=True)
    if sat is not None and not sat > 0:
        r.fail("rule.saturation_scale", f"must be > 0, got {sat}")
        sat = None

    steps = r.int_("run.steps", minimum=1)
    seed = r.int_("run.seed", default=0)
    metric_window = None
    if r.has("run.metric_window"):
        entry = raw.entries["run.metric_window"][1]
        if entry.lower() != "none":
            metric_window = r.int_("run.metric_window", minimum=1)
        else:
            r.used.add("run.metric_window")
    overlap = r.bool_("run.overlap", default=False)
    ceiling = r.float_("run.divergence_ceiling", default=DEFAULT_DIVERGENCE_CEILING)
    if ceiling is not None and not ceiling > 0:
        r.fail("run.divergence_ceiling", f"must be > 0, got {ceiling}")

    kind = r.str_("profile.kind", default=None, choices=tuple(_PROFILE_PARAM_KEYS))
    profile = None
    if kind is not None and steps is not None:
        allowed = _PROFILE_PARAM_KEYS[kind]
        params: dict = {}
        ok = True
        for key in sorted(allowed):
            full = f"profile.{key}"
            optional = key.startswith("confusion_")
            if key == "series":
                values = r.float_list(full, None, required=True)
                if values is None:
                    ok = False
                else:
                    params[key] = values
            elif key in _PROFILE_INT_PARAMS:
                value = r.int_(full, default=None, minimum=0)
                if value is None:
                    if not r.has(full):
                        r.errors.append(f"missing required key {full!r} for profile kind {kind!r}")
                    ok = False
                else:
                    params[key] = value
            else:
                value = r.float_(full, required=not optional)
                if value is None:
                    if optional:
                        continue
                    ok = False
                else:
                    params[key] = value
        for key in _PROFILE_KEYS - allowed - {"kind"}:
            if r.has(f"profile.{key}"):
                r.fail(f"profile.{key}", f"not a parameter of profile kind {kind!r}")
        if ok:
            try:
                profile = build_profile(kind, params, steps)
            except ValueError as exc:
                r.errors.append(f"profile: {exc}")

    if noise_kind != "wiener" and (r.has("crowd.mu") or r.has("crowd.sigma")):
        r.fail("crowd.noise", "crowd.mu/crowd.sigma are only meaningful with noise = wiener")

    if errors:
        raise ScenarioFormatError(errors)

    config = CrowdConfig(n=n, a=a, agents=agents, noise_model=noise_model, dt=dt)
    rule = SwitchRule(saturation_scale=sat, window=window)
    return ScenarioSpec(
        name=name,
        config=config,
        rule=rule,
        profile=profile,
        steps=steps,
        seed=seed,
        metric_window=metric_window,
        overlap=overlap,
        divergence_ceiling=ceiling,
    )


def load_scenario(path: str | Path) -> ScenarioSpec:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Canonical emission
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _collapse(values: list[float]) -> str:
    if all(v == values[0] for v in values):
        return repr(float(values[0]))
    return ", ".join(repr(float(v)) for v in values)


def format_scenario(spec: ScenarioSpec) -> str:
    """Canonical text form; parse(format(spec)) reproduces the spec."""
    cfg = spec.config
    lines = [f"name = {spec.name}"]
    lines.append(f"crowd.n = {cfg.n}")
    lines.append(f"crowd.a = {_fmt(cfg.a)}")
    lines.append(f"crowd.b_low = {_collapse([ag.b_low for ag in cfg.agents])}")
    lines.append(f"crowd.b_high = {_collapse([ag.b_high for ag in cfg.agents])}")
    lines.append(f"crowd.c = {_collapse([ag.c for ag in cfg.agents])}")
    lines.append(f"crowd.noise_amp = {_collapse([ag.noise_amp for ag in cfg.agents])}")
    if isinstance(cfg.noise_model, WienerNoise):
        lines.append("crowd.noise = wiener")
        lines.append(f"crowd.mu = {_fmt(cfg.noise_model.mu)}")
        lines.append(f"crowd.sigma = {_fmt(cfg.noise_model.sigma)}")
    elif isinstance(cfg.noise_model, UniformNoise):
        lines.append("crowd.noise = uniform")
    else:
        lines.append("crowd.noise = none")
    lines.append(f"crowd.dt = {_fmt(cfg.dt)}")
    lines.append(f"rule.window = {spec.rule.window}")
    lines.append(f"rule.saturation_scale = {_fmt(spec.rule.saturation_scale)}")
    lines.append(f"profile.kind = {spec.profile.kind}")
    for key in sorted(spec.profile.params):
        value = spec.profile.params[key]
        if key == "series":
            lines.append(f"profile.series = {', '.join(repr(float(x)) for x in value)}")
        else:
            lines.append(f"profile.{key} = {_fmt(value)}")
    lines.append(f"run.steps = {spec.steps}")
    lines.append(f"run.seed = {spec.seed}")
    lines.append(
        f"run.metric_window = {spec.metric_window if spec.metric_window is not None else 'none'}"
    )
    lines.append(f"run.overlap = {_fmt(spec.overlap)}")
    lines.append(f"run.divergence_ceiling = {_fmt(spec.divergence_ceiling)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Result tables
# ---------------------------------------------------------------------------

def _g17(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return format(float(x), ".17g")


def format_table(result: ScenarioResult) -> str:
    """TimeSeriesTable as CSV text: one row per executed step."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    n = result.config.n
    for k in range(result.steps_run):
        w.writerow(
            [
                int(result.t[k]),
                _g17(result.E[k]),
                _g17(result.dE[k]),
                _g17(result.S[k]),
                _g17(result.dS[k]),
                _g17(result.O[k]),
                _g17(result.dO[k]),
                int(result.n_reactive[k]),
                _g17(result.n_reactive[k] / n),
                _g17(result.b_total[k]),
                _g17(result.ab[k]),
                _g17(result.r_instant[k]),
                result.stability_trace[k].value,
            ]
        )
    return buf.getvalue()


def emit_table(result: ScenarioResult, destination: str | Path) -> Path:
    """Write the time-series table; identical results give identical bytes."""
    path = Path(destination)
    path.write_text(format_table(result), encoding="utf-8", newline="\n")
    return path


def format_summary(summary: RunSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    w.writerow(_summary_row(summary))
    return buf.getvalue()


def _summary_row(s: RunSummary) -> list:
    return [
        s.name,
        s.steps_run,
        "true" if s.diverged else "false",
        "" if s.truncated_at is None else s.truncated_at,
        s.seed,
        _g17(s.peak_O),
        _g17(s.final_O),
        _g17(s.peak_ratio),
        _g17(s.final_ratio),
        _g17(s.mean_R),
        _g17(s.rho_c),
        _g17(s.sigma_c),
        _g17(s.sigma_o),
        _g17(s.t_d),
        s.stability_final.value,
    ]


def emit_summary(summary: RunSummary, destination: str | Path) -> Path:
    path = Path(destination)
    path.write_text(format_summary(summary), encoding="utf-8", newline="\n")
    return path


def format_sweep_table(param: str, points: Sequence[SweepPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param", "param_value"] + SUMMARY_COLUMNS[1:])
    for pt in points:
        w.writerow([param, _g17(pt.value)] + _summary_row(pt.summary)[1:])
    return buf.getvalue()


def emit_sweep_table(param: str, points: Sequence[SweepPoint], destination: str | Path) -> Path:
    path = Path(destination)
    path.write_text(format_sweep_table(param, points), encoding="utf-8", newline="\n")
    return path


def format_curve_table(xs, means, stderrs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for x, m, s in zip(xs, means, stderrs):
        w.writerow([_g17(x), _g17(m), _g17(s)])
    return buf.getvalue()


def emit_curve_table(xs, means, stderrs, destination: str | Path) -> Path:
    path = Path(destination)
    path.write_text(format_curve_table(xs, means, stderrs), encoding="utf-8", newline="\n")
    return path


def read_table(path: str | Path) -> dict[str, np.ndarray]:
    """Read a time-series table back into column arrays."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TABLE_COLUMNS:
            raise ScenarioFormatError(
                [f"{path}: unexpected table header {header!r}; expected {TABLE_COLUMNS!r}"]
            )
        rows = list(reader)
    out: dict[str, np.ndarray] = {}
    for idx, col in enumerate(TABLE_COLUMNS):
        values = [row[idx] for row in rows]
        if col == "stability":
            out[col] = np.array(values)
        elif col in ("t", "N_H"):
            out[col] = np.array([int(v) for v in values])
        else:
            out[col] = np.array([float(v) for v in values])
    return out
