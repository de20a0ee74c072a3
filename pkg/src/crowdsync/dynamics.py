"""Core feedback dynamics of the crowd model.

A crowd of N agents acts on a shared observation. Per step, agent i's
action increment is

    dS_i = c_i * dE + b_i * dO_prev + eps_i

where dE is the external-force increment, dO_prev the previous
observation increment, and eps_i random noise. Actions are additive
(dS = sum dS_i) and feed back into the observation through the
sensitivity ``a``:

    dO = a * dS

Closing the loop with aggregate coefficients B = sum b_i, C = sum c_i
gives the one-step map

    dO(t+1) = (a*C) * dE(t) + (a*B) * dO(t)  [+ noise]

whose gain a*B decides everything: |a*B| < 1 contracts, a*B = 1 is the
singular point, a*B > 1 self-amplifies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

import numpy as np

#: Half-width of the band around loop gain 1 treated as singular/marginal.
SINGULARITY_TOL = 1e-9


class CrowdError(Exception):
    """Base class for crowd-model errors."""


class SingularFeedbackError(CrowdError):
    """Loop gain a*B is at the singular point (a*B = 1)."""


class EmptyPopulationError(CrowdError):
    """An operation that needs at least one agent got none."""


# ---------------------------------------------------------------------------
# Agents and configuration
# ---------------------------------------------------------------------------

class Mode(Enum):
    """Behavioral mode of an agent."""

    NORMAL = "normal"
    REACTIVE = "reactive"


@dataclass(frozen=True)
class AgentParams:
    """Per-agent coefficients.

    b_low / b_high are the observation-coupling values taken in the
    normal / reactive mode; c is the sensitivity to external force;
    noise_amp is the half-width of the agent's uniform action noise.
    """

    id: int
    b_low: float
    b_high: float
    c: float
    noise_amp: float = 0.0

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError(f"agent id must be >= 0, got {self.id}")
        if not self.b_high > 0:
            raise ValueError(f"agent {self.id}: b_high must be > 0, got {self.b_high}")
        if not self.b_high > self.b_low:
            raise ValueError(
                f"agent {self.id}: b_high must exceed b_low "
                f"(got b_high={self.b_high}, b_low={self.b_low})"
            )
        if self.noise_amp < 0:
            raise ValueError(f"agent {self.id}: noise_amp must be >= 0")


@dataclass(frozen=True)
class AgentState:
    """Current mode of an agent plus the coupling value it implies."""

    mode: Mode
    effective_b: float

    @classmethod
    def of(cls, params: AgentParams, mode: Mode) -> "AgentState":
        b = params.b_high if mode is Mode.REACTIVE else params.b_low
        return cls(mode=mode, effective_b=b)


# Noise models. NoNoise keeps runs fully deterministic; UniformNoise is
# per-agent i.i.d. action noise; WienerNoise is aggregate drift+diffusion
# applied at the observation level (a*eps_total = mu*dt + sigma*dZ).

@dataclass(frozen=True)
class NoNoise:
    pass


@dataclass(frozen=True)
class UniformNoise:
    half_width: float

    def __post_init__(self) -> None:
        if self.half_width < 0:
            raise ValueError("uniform noise half-width must be >= 0")


@dataclass(frozen=True)
class WienerNoise:
    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError("wiener sigma must be >= 0")


NoiseModel = Union[NoNoise, UniformNoise, WienerNoise]


@dataclass
class CrowdConfig:
    """Population plus the shared observation sensitivity.

    Agents must be listed in ascending id order 0..n-1; every aggregate
    in the package sums in that order so runs are bit-reproducible.
    """

    n: int
    a: float
    agents: list[AgentParams]
    noise_model: NoiseModel = field(default_factory=NoNoise)
    dt: float = 1.0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"population n must be >= 1, got {self.n}")
        if not self.a > 0:
            raise ValueError(f"observation sensitivity a must be > 0, got {self.a}")
        if not self.dt > 0:
            raise ValueError(f"time step dt must be > 0, got {self.dt}")
        if len(self.agents) != self.n:
            raise ValueError(f"expected {self.n} agents, got {len(self.agents)}")
        for i, ag in enumerate(self.agents):
            if ag.id != i:
                raise ValueError(f"agents must be ordered by id 0..n-1; slot {i} holds id {ag.id}")

    @property
    def c_total(self) -> float:
        return ordered_sum([ag.c for ag in self.agents])

    @property
    def b_high_total(self) -> float:
        return ordered_sum([ag.b_high for ag in self.agents])

    @property
    def ab_max(self) -> float:
        """Loop gain with every agent reactive, a * sum(b_high)."""
        return self.a * self.b_high_total


def homogeneous_agents(
    n: int, b_low: float, b_high: float, c: float, noise_amp: float = 0.0
) -> list[AgentParams]:
    """N identical agents with ids 0..n-1."""
    return [AgentParams(id=i, b_low=b_low, b_high=b_high, c=c, noise_amp=noise_amp) for i in range(n)]


@dataclass
class StepRecord:
    """Full output of one simulation step.

    ``agent_actions`` holds the per-agent dS_i vector (None when a run
    was asked not to record it). ``dS`` is its fixed-order sum, ``dO``
    equals a*dS, ``O`` the running sum of dO.
    """

    t: int
    dE: float
    agent_actions: np.ndarray | None
    dS: float
    dO: float
    O: float
    n_reactive: int
    b_total: float
    ab: float


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------

def agent_step(
    params: AgentParams, state: AgentState, dE: float, dO_prev: float, noise: float = 0.0
) -> float:
    """One agent's action increment: c*dE + b*dO_prev + noise."""
    return params.c * dE + state.effective_b * dO_prev + noise


def ordered_sum(values: Sequence[float] | np.ndarray) -> float:
    """Sum in ascending index order (left to right), no reassociation.

    The canonical reduction for every aggregate in the package; fixing
    the order makes runs bit-identical across machines.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise EmptyPopulationError("cannot aggregate an empty vector")
    # add.accumulate applies + sequentially, i.e. strict left-to-right.
    return float(np.add.accumulate(arr)[-1])


def aggregate(agent_actions: Sequence[float] | np.ndarray) -> float:
    """Aggregate action increment dS = sum of per-agent dS_i."""
    return ordered_sum(agent_actions)


def observe(a: float, dS: float) -> float:
    """Observation increment dO = a * dS."""
    if not a > 0:
        raise ValueError(f"observation sensitivity a must be > 0, got {a}")
    return a * dS


def instantaneous_response(a: float, b_total: float, c_total: float, dE: float) -> float:
    """Zero-delay closed form dO = a*C/(1 - a*B) * dE.

    Raises SingularFeedbackError within SINGULARITY_TOL of loop gain 1,
    where the crowd is hypersensitive and the closed form blows up.
    """
    ab = a * b_total
    if abs(1.0 - ab) < SINGULARITY_TOL:
        raise SingularFeedbackError(f"loop gain a*B = {ab!r} is at the singular point 1")
    return (a * c_total / (1.0 - ab)) * dE


def recurse_observation(a: float, b_total: float, c_total: float, dE_t: float, dO_t: float) -> float:
    """Delayed-response map: dO(t+1) = (a*C)*dE(t) + (a*B)*dO(t)."""
    return a * c_total * dE_t + a * b_total * dO_t


def noise_increment(model: NoiseModel, rng: np.random.Generator, dt: float = 1.0) -> float:
    """Draw one noise term for the observation update.

    NoNoise -> 0; UniformNoise(e) -> U[-e, +e]; WienerNoise(mu, sigma) ->
    mu*dt + sigma*sqrt(dt)*z with z standard normal.
    """
    if isinstance(model, NoNoise):
        return 0.0
    if isinstance(model, UniformNoise):
        return float(rng.uniform(-model.half_width, model.half_width))
    if isinstance(model, WienerNoise):
        return model.mu * dt + model.sigma * math.sqrt(dt) * float(rng.standard_normal())
    raise TypeError(f"unknown noise model: {model!r}")


def step_with_noise(
    a: float, b_total: float, c_total: float, dE_t: float, dO_t: float, noise: float
) -> float:
    """Canonical per-step update: delayed-response map plus noise term."""
    return recurse_observation(a, b_total, c_total, dE_t, dO_t) + noise
