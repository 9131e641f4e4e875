"""Pure schedule kernels: the noise schedule, the training-time modulator,
and the inference-time knob gate.

Everything in this module is side-effect free and immutable after
construction, so the objects can be shared freely across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NoiseSchedule",
    "ModulatorConfig",
    "KnobConfig",
    "make_noise_schedule",
    "modulator_value",
    "knob_gate",
    "posterior_sigma",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep diffusion coefficients.

    ``betas[i]`` is the noise rate at 1-indexed timestep ``t = i + 1``;
    ``alphas = 1 - betas`` and ``alpha_bars`` is the running product of
    ``alphas``.  ``alpha_bar(0)`` is defined as 1 so the posterior standard
    deviation vanishes at the final denoising step.
    """

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D sequence")
        if not np.all((betas > 0.0) & (betas < 1.0)):
            raise ValueError("every beta must lie in the open interval (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        if not np.all(np.diff(alpha_bars) < 0.0):
            raise ValueError("alpha_bars must be strictly decreasing")
        for arr in (betas, alphas, alpha_bars):
            arr.flags.writeable = False
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def T_steps(self) -> int:
        return int(self.betas.size)

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T_steps:
            raise ValueError(f"timestep {t} outside [1, {self.T_steps}]")
        return t

    def beta(self, t: int) -> float:
        return float(self.betas[self._check_t(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check_t(t) - 1])

    def alpha_bar(self, t: int) -> float:
        """Cumulative product up to timestep ``t``, with ``alpha_bar(0) == 1``."""
        t = int(t)
        if t == 0:
            return 1.0
        return float(self.alpha_bars[self._check_t(t) - 1])


def make_noise_schedule(T_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule from ``beta_start`` to ``beta_end`` inclusive.

    The linear shape and the (1e-4, 0.02) defaults are the conventional
    choice; both endpoints are fully configurable.
    """
    T_steps = int(T_steps)
    if T_steps < 1:
        raise ValueError("T_steps must be a positive integer")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T_steps, dtype=np.float64)
    return NoiseSchedule(betas=betas)


def posterior_sigma(schedule: NoiseSchedule, t: int) -> float:
    """Standard deviation of the denoising posterior at timestep ``t``.

    sigma_t = sqrt((1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t), with
    alpha_bar_0 == 1 so sigma_1 == 0 and the last step is deterministic.
    """
    t = schedule._check_t(t)
    num = 1.0 - schedule.alpha_bar(t - 1)
    den = 1.0 - schedule.alpha_bar(t)
    return math.sqrt(num / den * schedule.beta(t))


@dataclass(frozen=True)
class ModulatorConfig:
    """Tanh ramp controlling how strongly fine residuals enter training.

    ``T_epochs`` is the ramp horizon, not necessarily the total training
    length; callers hold the value at ``m_max`` once the ramp is done.
    """

    T_epochs: int
    k: float = 6.0
    m_min: float = 0.2
    m_max: float = 1.0

    def __post_init__(self):
        if int(self.T_epochs) < 1:
            raise ValueError("T_epochs must be a positive integer")
        if not self.k > 0.0:
            raise ValueError("k must be positive")
        if not 0.0 <= self.m_min < 1.0:
            raise ValueError("m_min must lie in [0, 1)")
        if not self.m_min < self.m_max <= 1.0:
            raise ValueError("need m_min < m_max <= 1")


def modulator_value(cfg: ModulatorConfig, epoch: float) -> float:
    """Fine-branch weight at a given epoch of the ramp.

    m_t = m_min + (1 + tanh(k * t/T - 3)) / 2 * (m_max - m_min)

    The argument of tanh sweeps [-3, 3] over the ramp with the default
    k = 6, so m_t rises smoothly from just above m_min to just below
    m_max, crossing the midpoint (m_min + m_max) / 2 at t = T/2.
    """
    if epoch < 0 or epoch > cfg.T_epochs:
        raise ValueError(f"epoch {epoch} outside the ramp horizon [0, {cfg.T_epochs}]")
    psi = cfg.k * (epoch / cfg.T_epochs) - 3.0
    return cfg.m_min + 0.5 * (1.0 + math.tanh(psi)) * (cfg.m_max - cfg.m_min)


@dataclass(frozen=True)
class KnobConfig:
    """Inference-time detail knob: fine residuals are injected only during
    the first ``gamma`` of ``S`` denoising steps."""

    S: int
    gamma: int

    def __post_init__(self):
        if int(self.S) < 1:
            raise ValueError("S must be a positive integer")
        if not 0 <= int(self.gamma) <= int(self.S):
            raise ValueError(f"gamma {self.gamma} outside [0, {self.S}]")


def knob_gate(cfg: KnobConfig, step: int) -> bool:
    """True when fine residuals are injected at denoising step ``step``.

    Steps count from 1 (the noisiest) to S (the last); the gate is open
    for step <= gamma, so a larger gamma lets fine detail influence more
    of the trajectory.
    """
    step = int(step)
    if not 1 <= step <= cfg.S:
        raise ValueError(f"step {step} outside [1, {cfg.S}]")
    return step <= cfg.gamma
