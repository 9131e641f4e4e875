"""Fine controller: a strided convolutional adapter that turns the raw
sketch into one additive residual per denoiser encoder level.

Output projections are zero-initialized by default so a freshly built
adapter contributes exactly nothing until trained (safe start).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import torch
import torch.nn as nn
import torch.nn.functional as F

from .unet import zero_module


@dataclass(frozen=True)
class AdapterConfig:
    level_channels: tuple
    downsample_factors: tuple
    zero_init_outputs: bool = True
    in_channels: int = 1

    def __post_init__(self):
        if len(self.level_channels) != len(self.downsample_factors):
            raise ValueError("level_channels and downsample_factors must have equal length")
        if any(f < 1 for f in self.downsample_factors):
            raise ValueError("downsample factors must be >= 1")


class SketchAdapter(nn.Module):
    """Convolutional pyramid over the sketch; one residual per level."""

    def __init__(self, cfg: AdapterConfig):
        super().__init__()
        self.cfg = cfg
        self.stem = nn.Conv2d(cfg.in_channels, cfg.level_channels[0], 3, padding=1)
        bodies, heads = [], []
        prev = cfg.level_channels[0]
        for ch, f in zip(cfg.level_channels, cfg.downsample_factors):
            bodies.append(
                nn.Sequential(
                    nn.Conv2d(prev, ch, 3, stride=f, padding=1),
                    nn.SiLU(),
                    nn.Conv2d(ch, ch, 3, padding=1),
                    nn.SiLU(),
                )
            )
            head = nn.Conv2d(ch, ch, 1)
            if cfg.zero_init_outputs:
                zero_module(head)
            heads.append(head)
            prev = ch
        self.bodies = nn.ModuleList(bodies)
        self.heads = nn.ModuleList(heads)

    def forward(self, sketch: torch.Tensor) -> List[torch.Tensor]:
        """sketch: (B, 1, H, W) or (1, H, W) binary raster -> per-level residuals."""
        squeeze = sketch.dim() == 3
        if squeeze:
            sketch = sketch.unsqueeze(0)
        h = F.silu(self.stem(sketch))
        out = []
        for body, head in zip(self.bodies, self.heads):
            h = body(h)
            r = head(h)
            out.append(r.squeeze(0) if squeeze else r)
        return out
