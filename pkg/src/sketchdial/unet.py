"""Small conditional U-Net denoiser.

The network predicts the noise added to an image. Conditioning enters two
ways: a token-sequence context via cross-attention at selected resolution
levels, and per-level additive residuals (from the sketch adapter) scaled
by a single ``fine_scale`` multiplier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 32
    channel_multipliers: tuple = (1, 2, 2)
    attention_levels: tuple = (1, 2)
    d_ctx: int = 64
    L_ctx: int = 16
    image_size: int = 32
    image_channels: int = 3
    T_steps: int = 1000
    n_heads: int = 4
    norm_groups: int = 8

    def __post_init__(self):
        levels = len(self.channel_multipliers)
        if levels < 1:
            raise ValueError("need at least one resolution level")
        bad = [l for l in self.attention_levels if not 0 <= l < levels]
        if bad:
            raise ValueError(f"attention_levels {bad} outside valid level indices 0..{levels - 1}")
        if self.image_size % (2 ** (levels - 1)) != 0:
            raise ValueError("image_size must be divisible by 2^(levels-1)")

    @property
    def level_channels(self) -> tuple:
        return tuple(self.base_channels * m for m in self.channel_multipliers)

    @property
    def level_sizes(self) -> tuple:
        return tuple(self.image_size // (2 ** i) for i in range(len(self.channel_multipliers)))


@dataclass
class ConditioningBundle:
    """Everything the denoiser consumes besides the noisy image.

    ``coarse_context`` is a (L_ctx, d_ctx) or (B, L_ctx, d_ctx) token matrix
    feeding the cross-attention sites. ``fine_residuals`` holds one tensor
    per encoder level (or None for no fine branch); ``fine_scale`` is the
    single multiplier the modulator/knob act through.
    """

    coarse_context: torch.Tensor
    fine_residuals: Optional[Sequence[torch.Tensor]] = None
    fine_scale: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.fine_scale <= 1.0:
            raise ValueError(f"fine_scale {self.fine_scale} outside [0, 1]")


def zero_module(module: nn.Module) -> nn.Module:
    """Zero all parameters so the module starts as a no-op contributor."""
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


class SinusoidalTimeEmbedding(nn.Module):
    """Fixed sin/cos embedding of the integer timestep."""

    def __init__(self, dim):
        super().__init__()
        half = dim // 2
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half) / max(half - 1, 1))
        self.register_buffer("freqs", freqs)

    def forward(self, t):
        args = t.float()[:, None] * self.freqs[None, :]
        return torch.cat([args.sin(), args.cos()], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, in_ch, out_ch, time_dim, groups):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(groups, in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_mlp = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(min(groups, out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_mlp(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class CrossAttention(nn.Module):
    """Feature-map tokens attend over the conditioning context."""

    def __init__(self, channels, d_ctx, n_heads):
        super().__init__()
        if channels % n_heads != 0:
            raise ValueError("channels must be divisible by n_heads")
        self.n_heads = n_heads
        self.norm = nn.GroupNorm(1, channels)
        self.ctx_norm = nn.LayerNorm(d_ctx)
        self.to_q = nn.Linear(channels, channels)
        self.to_k = nn.Linear(d_ctx, channels)
        self.to_v = nn.Linear(d_ctx, channels)
        self.to_out = nn.Linear(channels, channels)

    def forward(self, x, ctx):
        B, C, H, W = x.shape
        h = self.norm(x).view(B, C, H * W).transpose(1, 2)  # (B, HW, C)
        ctx = self.ctx_norm(ctx)
        q = self.to_q(h)
        k = self.to_k(ctx)
        v = self.to_v(ctx)
        hd = C // self.n_heads

        def split(t):
            return t.view(B, -1, self.n_heads, hd).transpose(1, 2)

        attn = torch.softmax(split(q) @ split(k).transpose(-1, -2) / math.sqrt(hd), dim=-1)
        out = (attn @ split(v)).transpose(1, 2).reshape(B, H * W, C)
        out = self.to_out(out)
        return x + out.transpose(1, 2).view(B, C, H, W)


class CondUNet(nn.Module):
    """Noise-prediction U-Net with cross-attention and fine-residual inputs.

    Fine residuals are added to each encoder level's output (so they reach
    both the skip connection and the downstream path); the context enters
    through cross-attention at ``attention_levels`` on both the encoder and
    decoder sides plus the middle block.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        chs = cfg.level_channels
        levels = len(chs)
        time_dim = cfg.base_channels * 4

        self.time_embed = SinusoidalTimeEmbedding(cfg.base_channels)
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.base_channels, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )

        self.conv_in = nn.Conv2d(cfg.image_channels, chs[0], 3, padding=1)

        self.enc_blocks = nn.ModuleList()
        self.enc_attn = nn.ModuleList()
        self.downs = nn.ModuleList()
        for i in range(levels):
            in_ch = chs[0] if i == 0 else chs[i - 1]
            self.enc_blocks.append(ResBlock(in_ch, chs[i], time_dim, cfg.norm_groups))
            self.enc_attn.append(
                CrossAttention(chs[i], cfg.d_ctx, cfg.n_heads) if i in cfg.attention_levels else None
            )
            if i < levels - 1:
                self.downs.append(nn.Conv2d(chs[i], chs[i], 3, stride=2, padding=1))

        self.mid_block1 = ResBlock(chs[-1], chs[-1], time_dim, cfg.norm_groups)
        self.mid_attn = CrossAttention(chs[-1], cfg.d_ctx, cfg.n_heads)
        self.mid_block2 = ResBlock(chs[-1], chs[-1], time_dim, cfg.norm_groups)

        self.dec_blocks = nn.ModuleList()
        self.dec_attn = nn.ModuleList()
        self.ups = nn.ModuleList()
        for i in reversed(range(levels)):
            self.dec_blocks.append(ResBlock(chs[i] * 2, chs[i], time_dim, cfg.norm_groups))
            self.dec_attn.append(
                CrossAttention(chs[i], cfg.d_ctx, cfg.n_heads) if i in cfg.attention_levels else None
            )
            if i > 0:
                self.ups.append(nn.Conv2d(chs[i], chs[i - 1], 3, padding=1))

        self.out_norm = nn.GroupNorm(min(cfg.norm_groups, chs[0]), chs[0])
        self.out_conv = zero_module(nn.Conv2d(chs[0], cfg.image_channels, 3, padding=1))

    def _validate(self, z, cond):
        cfg = self.cfg
        if z.shape[-3:] != (cfg.image_channels, cfg.image_size, cfg.image_size):
            raise ValueError(f"input shape {tuple(z.shape)} does not match the model configuration")
        if not torch.isfinite(z).all():
            raise ValueError("non-finite values in the input state")
        ctx = cond.coarse_context
        if ctx.shape[-2:] != (cfg.L_ctx, cfg.d_ctx):
            raise ValueError(f"context shape {tuple(ctx.shape)} != (L_ctx={cfg.L_ctx}, d_ctx={cfg.d_ctx})")
        if not torch.isfinite(ctx).all():
            raise ValueError("non-finite values in the conditioning context")
        if cond.fine_residuals is not None:
            if len(cond.fine_residuals) != len(cfg.channel_multipliers):
                raise ValueError("one fine residual per encoder level is required")
            for i, (r, ch, size) in enumerate(zip(cond.fine_residuals, cfg.level_channels, cfg.level_sizes)):
                if r.shape[-3:] != (ch, size, size):
                    raise ValueError(
                        f"fine residual {i} has shape {tuple(r.shape)}, expected (*, {ch}, {size}, {size})"
                    )

    def forward(self, z, t, cond: ConditioningBundle):
        """Predict the noise in ``z`` at timestep ``t`` (same shape as ``z``)."""
        squeeze = z.dim() == 3
        if squeeze:
            z = z.unsqueeze(0)
        self._validate(z, cond)
        B = z.shape[0]

        if not torch.is_tensor(t):
            t = torch.full((B,), int(t), dtype=torch.long, device=z.device)
        elif t.dim() == 0:
            t = t.expand(B)
        ctx = cond.coarse_context
        if ctx.dim() == 2:
            ctx = ctx.unsqueeze(0).expand(B, -1, -1)

        temb = self.time_mlp(self.time_embed(t))
        residuals = cond.fine_residuals
        inject = residuals is not None and cond.fine_scale != 0.0

        h = self.conv_in(z)
        skips = []
        for i, block in enumerate(self.enc_blocks):
            h = block(h, temb)
            if self.enc_attn[i] is not None:
                h = self.enc_attn[i](h, ctx)
            if inject:
                r = residuals[i]
                if r.dim() == 3:
                    r = r.unsqueeze(0)
                h = h + cond.fine_scale * r
            skips.append(h)
            if i < len(self.downs):
                h = self.downs[i](h)

        h = self.mid_block1(h, temb)
        h = self.mid_attn(h, ctx)
        h = self.mid_block2(h, temb)

        for j, block in enumerate(self.dec_blocks):
            h = block(torch.cat([h, skips[-1 - j]], dim=1), temb)
            if self.dec_attn[j] is not None:
                h = self.dec_attn[j](h, ctx)
            if j < len(self.ups):
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.ups[j](h)

        out = self.out_conv(F.silu(self.out_norm(h)))
        return out.squeeze(0) if squeeze else out
