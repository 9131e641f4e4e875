"""Diffusion math: forward noising, the denoising training loss, the
ancestral sampling update, and the knob-gated sampling loop.

Sampling with fewer steps than the training horizon uses an alpha-bar
matched sub-schedule over an evenly spaced timestep subsequence (always
ending at t = 1), so the ancestral update stays exact on the selected
steps and reduces to the full schedule when S == T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .schedules import KnobConfig, NoiseSchedule, knob_gate, posterior_sigma
from .unet import ConditioningBundle


@dataclass
class LatentState:
    """An image-shaped state together with its diffusion timestep."""

    data: torch.Tensor
    t: int

    def __post_init__(self):
        if not torch.isfinite(self.data).all():
            raise ValueError("latent state contains non-finite entries")


def _unwrap(z):
    return z.data if isinstance(z, LatentState) else z


def _gather(values: np.ndarray, t, like: torch.Tensor) -> torch.Tensor:
    """Per-sample schedule coefficient broadcast to the shape of ``like``."""
    if torch.is_tensor(t):
        idx = t.long().cpu().numpy() - 1
        if np.any(idx < 0) or np.any(idx >= values.size):
            raise ValueError("timestep out of range")
        coef = torch.as_tensor(values[idx], dtype=like.dtype, device=like.device)
        return coef.view(-1, *([1] * (like.dim() - 1)))
    t = int(t)
    if not 1 <= t <= values.size:
        raise ValueError(f"timestep {t} outside [1, {values.size}]")
    return torch.as_tensor(values[t - 1], dtype=like.dtype, device=like.device)


def add_noise(z0, eps: torch.Tensor, t, schedule: NoiseSchedule):
    """Forward noising: sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps.

    ``t`` may be a scalar or a per-sample tensor for batched inputs; the
    return type mirrors the input (LatentState in, LatentState out).
    """
    data = _unwrap(z0)
    if eps.shape != data.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != state shape {tuple(data.shape)}")
    abar = _gather(schedule.alpha_bars, t, data)
    noisy = torch.sqrt(abar) * data + torch.sqrt(1.0 - abar) * eps
    if isinstance(z0, LatentState):
        if torch.is_tensor(t) and t.dim() > 0:
            raise ValueError("a LatentState carries a single timestep; pass a scalar t")
        return LatentState(data=noisy, t=int(t))
    return noisy


def training_loss(denoiser, z0_batch, cond: ConditioningBundle, t_batch, eps_batch, schedule: NoiseSchedule):
    """Mean squared error between predicted and actual noise.

    The mean runs over the batch and every element, so the value is
    invariant to batch order and zero exactly when the prediction matches
    the noise elementwise.
    """
    if eps_batch.shape != z0_batch.shape:
        raise ValueError("noise batch must match the image batch shape")
    z_t = add_noise(z0_batch, eps_batch, t_batch, schedule)
    pred = denoiser(z_t, t_batch, cond)
    return torch.mean((pred - eps_batch) ** 2)


def sample_step(z_t, t: int, eps_hat: torch.Tensor, schedule: NoiseSchedule, noise: Optional[torch.Tensor] = None):
    """One ancestral denoising update.

    z_{t-1} = (z_t - (1 - a_t) / sqrt(1 - abar_t) * eps_hat) / sqrt(a_t)
              + sigma_t * noise

    At t = 1 the posterior is deterministic and ``noise`` is forced to zero.
    """
    data = _unwrap(z_t)
    if eps_hat.shape != data.shape:
        raise ValueError("eps_hat shape must match the state shape")
    t = int(t)
    alpha = schedule.alpha(t)
    abar = schedule.alpha_bar(t)
    mean = (data - (1.0 - alpha) / math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(alpha)
    sigma = posterior_sigma(schedule, t)
    if sigma > 0.0 and noise is not None and t > 1:
        if noise.shape != data.shape:
            raise ValueError("noise shape must match the state shape")
        mean = mean + sigma * noise
    if isinstance(z_t, LatentState):
        return LatentState(data=mean, t=t - 1)
    return mean


def strided_timesteps(T_steps: int, S: int) -> list[int]:
    """Evenly spaced decreasing timesteps from T to 1 inclusive, length S."""
    if not 1 <= S <= T_steps:
        raise ValueError(f"need 1 <= S <= T_steps, got S={S}, T={T_steps}")
    if S == 1:
        return [T_steps]
    ts = [int(round(v)) for v in np.linspace(T_steps, 1, S)]
    if len(set(ts)) != S:
        raise ValueError("strided timesteps collided; reduce S")
    return ts


def respaced_schedule(schedule: NoiseSchedule, timesteps_desc: Sequence[int]) -> NoiseSchedule:
    """Sub-schedule whose alpha_bars match the base schedule on the
    selected timesteps (given in decreasing order)."""
    asc = list(reversed(timesteps_desc))
    abars = np.array([schedule.alpha_bar(t) for t in asc], dtype=np.float64)
    prev = np.concatenate([[1.0], abars[:-1]])
    betas = 1.0 - abars / prev
    return NoiseSchedule(betas=betas)


@torch.no_grad()
def sample(
    denoiser,
    coarse_context: torch.Tensor,
    fine_residuals: Optional[Sequence[torch.Tensor]],
    knob: KnobConfig,
    schedule: NoiseSchedule,
    seed: int,
    on_step: Optional[Callable[[int, int, torch.Tensor], None]] = None,
) -> torch.Tensor:
    """Run the full knob-gated denoising loop from seeded Gaussian noise.

    Fine residuals are injected only at steps ``s <= knob.gamma`` (step 1 is
    the noisiest); the same seed always reproduces the same output, and the
    per-step noise draws do not depend on gamma, so sweeping the knob with a
    pinned seed isolates its effect. The result is clipped to [-1, 1].
    """
    cfg = denoiser.cfg
    timesteps = strided_timesteps(schedule.T_steps, knob.S)
    sub = respaced_schedule(schedule, timesteps)

    gen = torch.Generator(device="cpu").manual_seed(int(seed))
    batched = coarse_context.dim() == 3
    shape = (cfg.image_channels, cfg.image_size, cfg.image_size)
    if batched:
        shape = (coarse_context.shape[0],) + shape
    z = torch.randn(shape, generator=gen)

    for s, t_orig in enumerate(timesteps, start=1):
        fine_on = knob_gate(knob, s) and fine_residuals is not None
        cond = ConditioningBundle(
            coarse_context=coarse_context,
            fine_residuals=fine_residuals if fine_on else None,
            fine_scale=1.0 if fine_on else 0.0,
        )
        eps_hat = denoiser(z, t_orig, cond)
        t_sub = knob.S - s + 1  # sub-schedule timestep, S down to 1
        noise = torch.randn(shape, generator=gen) if t_sub > 1 else None
        z = sample_step(z, t_sub, eps_hat, sub, noise)
        if on_step is not None:
            on_step(s, t_orig, z)
    return z.clamp(-1.0, 1.0)
