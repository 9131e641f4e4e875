"""Model/pipeline configuration and the CLI config-file machinery.

A single ``PipelineConfig`` describes every component shape plus the noise
schedule and knob defaults; CLI subcommands read an optional YAML (or
JSON) file and apply flag overrides on top, so precedence is always
flag > config file > built-in default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import yaml

from .coarse import (
    DEFAULT_TOKENS,
    FusionConfig,
    PatchEncoderConfig,
    TextEncoderConfig,
    Vocabulary,
)
from .fine import AdapterConfig
from .schedules import NoiseSchedule, make_noise_schedule
from .unet import DenoiserConfig


@dataclass(frozen=True)
class PipelineConfig:
    # denoiser
    image_size: int = 32
    image_channels: int = 3
    base_channels: int = 32
    channel_multipliers: tuple = (1, 2, 2)
    attention_levels: tuple = (1, 2)
    n_heads: int = 4
    norm_groups: int = 8
    # conditioning context
    L_ctx: int = 16
    d_ctx: int = 64
    vocab_tokens: tuple = tuple(DEFAULT_TOKENS)
    # sketch token encoder
    patch_size: int = 4
    d_img: int = 64
    # fusion block
    fusion_hidden: int = 128
    fusion_layers: int = 4
    fusion_heads: int = 4
    # noise schedule
    T_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # knob defaults
    S_default: int = 50
    gamma_default: int = 20

    def denoiser_config(self) -> DenoiserConfig:
        return DenoiserConfig(
            base_channels=self.base_channels,
            channel_multipliers=tuple(self.channel_multipliers),
            attention_levels=tuple(self.attention_levels),
            d_ctx=self.d_ctx,
            L_ctx=self.L_ctx,
            image_size=self.image_size,
            image_channels=self.image_channels,
            T_steps=self.T_steps,
            n_heads=self.n_heads,
            norm_groups=self.norm_groups,
        )

    def adapter_config(self) -> AdapterConfig:
        levels = len(self.channel_multipliers)
        return AdapterConfig(
            level_channels=self.denoiser_config().level_channels,
            downsample_factors=(1,) + (2,) * (levels - 1),
        )

    def patch_config(self) -> PatchEncoderConfig:
        return PatchEncoderConfig(image_size=self.image_size, patch_size=self.patch_size, d_img=self.d_img)

    def text_config(self) -> TextEncoderConfig:
        return TextEncoderConfig(vocab_size=len(self.vocabulary()), L_text=self.L_ctx, d_text=self.d_ctx)

    def fusion_config(self) -> FusionConfig:
        pc = self.patch_config()
        return FusionConfig(
            L_text=self.L_ctx,
            d_text=self.d_ctx,
            L_img=pc.n_tokens,
            d_img=self.d_img,
            d_hidden=self.fusion_hidden,
            n_layers=self.fusion_layers,
            n_heads=self.fusion_heads,
        )

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(list(self.vocab_tokens))

    def schedule(self) -> NoiseSchedule:
        return make_noise_schedule(self.T_steps, self.beta_start, self.beta_end)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key, value in d.items():
            if isinstance(value, tuple):
                d[key] = list(value)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - fields
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = dict(d)
        for key in ("channel_multipliers", "attention_levels", "vocab_tokens"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


# --------------------------------------------------------------------------
# CLI config files. Top-level sections (all optional):
#   model:     PipelineConfig fields
#   modulator: k, m_min, m_max
#   knob:      steps, gamma
#   train:     epochs, lr, batch_size, seed, checkpoint_every
#   data:      n, image_size, seed, distortion
# --------------------------------------------------------------------------

CONFIG_SECTIONS = ("model", "modulator", "knob", "train", "data")

DEFAULTS: dict = {
    "model": PipelineConfig().to_dict(),
    "modulator": {"k": 6.0, "m_min": 0.2, "m_max": 1.0},
    "knob": {"steps": 50, "gamma": 20},
    "train": {"batch_size": 64, "seed": 0, "checkpoint_every": 0, "fine_dropout": 0.0},
    "data": {"n": 2000, "image_size": 32, "seed": 0, "distortion": 0.0},
}


def load_config_file(path) -> dict:
    """Parse a YAML/JSON config file and validate its section names."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ValueError(f"config file {path} must contain a mapping at the top level")
    unknown = set(raw) - set(CONFIG_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return raw


def merged_config(file_path=None, overrides: dict | None = None) -> dict:
    """defaults <- config file <- explicit overrides, per section."""
    merged = {section: dict(values) for section, values in DEFAULTS.items()}
    if file_path is not None:
        for section, values in load_config_file(file_path).items():
            if values:
                merged[section].update(values)
    if overrides:
        for section, values in overrides.items():
            merged.setdefault(section, {}).update(
                {k: v for k, v in values.items() if v is not None}
            )
    return merged
