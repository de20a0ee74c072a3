"""Synchronization, trend, and volatility measures.

Two complementary views of how aligned a crowd is:

* instantaneous order parameter  R = |sum dS_i| / sum |dS_i|  (one step),
* windowed crowd correlation  rho_c = mean_i corr(dS_i, dS)  (a period),

plus the crowd volatility sigma_c (std of the aggregate action), its
observed counterpart sigma_O = a * sigma_c, and trendiness
T_d = |sum dO| / sum |dO| over a window.

Conventions for degenerate inputs (documented, tested): R and T_d are 0
when every increment is zero; a correlation involving a constant series
is 0. These keep the metrics total over everything a simulation emits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import CrowdError, ordered_sum
from .rng import make_generator


class InvalidPanelError(CrowdError):
    """A decision panel on which the requested metric is undefined."""


class InvalidCorrelationError(CrowdError):
    """A correlation matrix that is not positive semidefinite."""


class DegenerateMixError(CrowdError):
    """Closed-form order parameter with a non-positive denominator."""


# ---------------------------------------------------------------------------
# Instantaneous order parameter
# ---------------------------------------------------------------------------

def order_parameter(agent_actions) -> float:
    """Alignment of one step's actions: |sum dS_i| / sum |dS_i|, in [0, 1].

    1 means every agent moved the same direction; a fully quiescent
    step (all dS_i = 0) returns 0.
    """
    arr = np.asarray(agent_actions, dtype=np.float64)
    denom = ordered_sum(np.abs(arr))
    if denom == 0.0:
        return 0.0
    return float(np.clip(abs(ordered_sum(arr)) / denom, 0.0, 1.0))


def order_parameter_closed_form(
    ratio: float, b_high_avg: float, b_low_avg: float, b_abs_low_avg: float
) -> float:
    """Noise-free order parameter as a function of the reactive fraction.

    With no external force and no noise, dS_i = b_i * dO, so R depends
    only on the coupling mix:

        R = |ratio*(B_H - B_L) + B_L| / (ratio*(B_H - B_0) + B_0)

    where B_H, B_L are the mean high/low couplings and B_0 the mean
    |low| coupling. The absolute value keeps R in [0, 1] when B_L < 0.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"reactive ratio must be in [0, 1], got {ratio}")
    if b_abs_low_avg < abs(b_low_avg):
        raise ValueError("mean |b_low| cannot be smaller than |mean b_low|")
    # mixture form of ratio*(B_H - B_L) + B_L: exact at both endpoints
    num = ratio * b_high_avg + (1.0 - ratio) * b_low_avg
    den = ratio * b_high_avg + (1.0 - ratio) * b_abs_low_avg
    if not den > 0.0:
        raise DegenerateMixError(f"order-parameter denominator {den!r} is not positive")
    return float(np.clip(abs(num) / den, 0.0, 1.0))


def noise_order_samples(
    ratio: float,
    b_high_avg: float,
    dO: float,
    e: float,
    n: int,
    trials: int,
    seed: int,
) -> np.ndarray:
    """Per-trial order parameters of a noisy one-step crowd.

    Reactive agents (first round(ratio*n) of them) respond b_high_avg*dO,
    the rest 0; every agent adds i.i.d. uniform noise from [-e, +e].
    Seeded and reproducible; one trial per row of draws.
    """
    if n < 1 or trials < 1:
        raise ValueError("need n >= 1 and trials >= 1")
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"reactive ratio must be in [0, 1], got {ratio}")
    if e < 0:
        raise ValueError(f"noise half-width must be >= 0, got {e}")
    n_reactive = min(int(np.floor(ratio * n + 0.5)), n)
    b = np.zeros(n)
    b[:n_reactive] = b_high_avg
    rng = make_generator(seed)
    eps = rng.uniform(-e, e, size=(trials, n))
    actions = b * dO + eps
    sums = np.abs(actions.sum(axis=1))
    denoms = np.abs(actions).sum(axis=1)
    out = np.zeros(trials)
    np.divide(sums, denoms, out=out, where=denoms > 0)
    return np.clip(out, 0.0, 1.0)


def order_parameter_with_noise(
    ratio: float, b_high_avg: float, dO: float, e: float, n: int, trials: int, seed: int
) -> float:
    """Monte-Carlo mean order parameter under uniform action noise."""
    return float(noise_order_samples(ratio, b_high_avg, dO, e, n, trials, seed).mean())


# ---------------------------------------------------------------------------
# Windowed panel statistics
# ---------------------------------------------------------------------------

def pairwise_correlation(x, y) -> float:
    """Correlation of two equal-length series, population-normalized.

    Returns 0 when either series is constant.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ValueError(f"series must be 1-d and equal length, got {xa.shape} vs {ya.shape}")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sx = float(np.sqrt(np.mean(xc * xc)))
    sy = float(np.sqrt(np.mean(yc * yc)))
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float(np.clip(np.mean(xc * yc) / (sx * sy), -1.0, 1.0))


@dataclass
class DecisionPanel:
    """Per-agent action series with their second-moment summary.

    series is N x T; per_agent_sigma the population std of each row;
    corr the N x N correlation matrix (0 rows/columns for constant
    agents, unit diagonal where sigma > 0).
    """

    series: np.ndarray
    per_agent_sigma: np.ndarray
    corr: np.ndarray

    @classmethod
    def from_series(cls, series) -> "DecisionPanel":
        arr = np.asarray(series, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"panel series must be N x T, got shape {arr.shape}")
        n, t = arr.shape
        if n < 1 or t < 1:
            raise ValueError(f"panel needs at least one agent and one step, got {arr.shape}")
        centered = arr - arr.mean(axis=1, keepdims=True)
        cov = (centered @ centered.T) / t
        cov = (cov + cov.T) / 2.0
        sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        live = sigma > 0.0
        denom = np.outer(sigma, sigma)
        corr = np.zeros((n, n))
        mask = np.outer(live, live)
        np.divide(cov, denom, out=corr, where=mask)
        corr = np.clip(corr, -1.0, 1.0)
        np.fill_diagonal(corr, np.where(live, 1.0, 0.0))
        return cls(series=arr, per_agent_sigma=sigma, corr=corr)

    @property
    def n(self) -> int:
        return self.series.shape[0]

    @property
    def aggregate_series(self) -> np.ndarray:
        return self.series.sum(axis=0)


def crowd_volatility(per_agent_sigma, corr) -> float:
    """Std of the aggregate action: sqrt(sum sigma_l^2 + 2 sum_{l>m} rho_lm sigma_l sigma_m)."""
    sigma = np.asarray(per_agent_sigma, dtype=np.float64)
    rho = np.asarray(corr, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValueError("per-agent sigma must be >= 0")
    var = float(sigma @ rho @ sigma)
    if var < 0.0:
        scale = float(np.sum(sigma * sigma))
        if var < -1e-12 * max(scale, 1.0):
            raise InvalidCorrelationError(
                f"correlation matrix yields negative aggregate variance {var!r}"
            )
        var = 0.0  # roundoff from a boundary matrix (e.g. perfect anticorrelation)
    return float(np.sqrt(var))


def crowd_correlation(panel: DecisionPanel) -> float:
    """Windowed synchronization rho_c via the volatility-weighted matrix form.

    rho_c = (1 / (N * sigma_c)) * sum_i sum_j rho_ij * sigma_j. Equals
    the direct form (mean correlation of each agent with the aggregate)
    up to roundoff; both are exposed and the equality is tested.
    """
    if not np.any(panel.per_agent_sigma > 0):
        raise InvalidPanelError("all agents are constant; crowd correlation is undefined")
    sigma_c = crowd_volatility(panel.per_agent_sigma, panel.corr)
    weighted = float((panel.corr @ panel.per_agent_sigma).sum())
    return float(np.clip(weighted / (panel.n * sigma_c), -1.0, 1.0))


def crowd_correlation_direct(panel: DecisionPanel) -> float:
    """rho_c by definition: mean over agents of corr(dS_i, sum_j dS_j)."""
    if not np.any(panel.per_agent_sigma > 0):
        raise InvalidPanelError("all agents are constant; crowd correlation is undefined")
    total = panel.aggregate_series
    rhos = [pairwise_correlation(panel.series[i], total) for i in range(panel.n)]
    return float(np.clip(np.mean(rhos), -1.0, 1.0))


def trendiness(dO_series) -> float:
    """Directional persistence of a window: |sum dO| / sum |dO|, in [0, 1].

    1 on a monotone window, 0 on exact cancellation or a quiet window.
    """
    arr = np.asarray(dO_series, dtype=np.float64)
    if arr.size < 1:
        raise ValueError("trendiness needs at least one increment")
    denom = float(np.abs(arr).sum())
    if denom == 0.0:
        return 0.0
    return float(np.clip(abs(float(arr.sum())) / denom, 0.0, 1.0))


def observed_volatility(a: float, sigma_c: float) -> float:
    """Volatility seen on the observation: sigma_O = a * sigma_c."""
    if not a > 0:
        raise ValueError(f"observation sensitivity a must be > 0, got {a}")
    if sigma_c < 0:
        raise ValueError(f"sigma_c must be >= 0, got {sigma_c}")
    return a * sigma_c


def observed_volatility_from_panel(a: float, per_agent_sigma, corr) -> float:
    """sigma_O expanded from per-agent volatilities and correlations."""
    return observed_volatility(a, crowd_volatility(per_agent_sigma, corr))


# ---------------------------------------------------------------------------
# Window report
# ---------------------------------------------------------------------------

@dataclass
class SyncReport:
    """Metrics for one analysis window of a run."""

    start: int
    stop: int
    r_instant: np.ndarray
    rho_c: float
    sigma_c: float
    sigma_o: float
    t_d: float


def sync_report(
    actions: np.ndarray,
    dO_window: np.ndarray,
    a: float,
    start: int = 0,
    r_instant: np.ndarray | None = None,
) -> SyncReport:
    """Summarize one window of per-agent actions and observation increments.

    A fully quiescent window reports rho_c = 0 (rather than raising, so
    pipelines stay total); the raw crowd_correlation op still refuses
    all-constant panels.
    """
    actions = np.asarray(actions, dtype=np.float64)
    dO_window = np.asarray(dO_window, dtype=np.float64)
    stop = start + actions.shape[1]
    panel = DecisionPanel.from_series(actions)
    if np.any(panel.per_agent_sigma > 0):
        rho_c = crowd_correlation(panel)
        sigma_c = crowd_volatility(panel.per_agent_sigma, panel.corr)
    else:
        rho_c = 0.0
        sigma_c = 0.0
    if r_instant is None:
        r_instant = np.array([order_parameter(actions[:, k]) for k in range(actions.shape[1])])
    return SyncReport(
        start=start,
        stop=stop,
        r_instant=np.asarray(r_instant, dtype=np.float64),
        rho_c=rho_c,
        sigma_c=sigma_c,
        sigma_o=observed_volatility(a, sigma_c),
        t_d=trendiness(dO_window),
    )
