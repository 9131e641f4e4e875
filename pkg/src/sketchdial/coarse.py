"""Coarse controller: toy sketch/text encoders plus the cross-attention
fusion block that conditions text tokens on sketch tokens.

The fusion block's output has the same shape as the text embedding, so it
can replace the raw text context at the denoiser's cross-attention sites.
The sketch tokens deliberately carry no positional encoding inside the
fusion block, which makes the block invariant to their order.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

DEFAULT_TOKENS = [
    "a", "and", "red", "green", "blue", "yellow", "purple", "orange",
    "cyan", "white", "circle", "square", "triangle", "star",
]


class Vocabulary:
    """Fixed toy vocabulary; tokenization is lowercase whitespace split."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        for special in (UNK_TOKEN, PAD_TOKEN):
            if special in tokens:
                tokens.remove(special)
            tokens.insert(0, special)
        self.tokens = tokens
        self.index = {tok: i for i, tok in enumerate(tokens)}
        self.pad_id = self.index[PAD_TOKEN]
        self.unk_id = self.index[UNK_TOKEN]

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def default(cls) -> "Vocabulary":
        return cls(DEFAULT_TOKENS)

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        """Load a newline-delimited token list."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln.strip() for ln in lines if ln.strip()])

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    def encode(self, text: str, length: int) -> List[int]:
        """Token ids padded/truncated to ``length``; unknown words map to UNK."""
        words = text.lower().split()
        ids = [self.index.get(w, self.unk_id) for w in words][:length]
        ids += [self.pad_id] * (length - len(ids))
        return ids


@dataclass(frozen=True)
class PatchEncoderConfig:
    image_size: int = 32
    patch_size: int = 4
    d_img: int = 64

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by patch_size")

    @property
    def n_tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @classmethod
    def paper_scale(cls) -> "PatchEncoderConfig":
        # 256 tokens of width 1024, the full-scale sketch-encoder shape.
        return cls(image_size=256, patch_size=16, d_img=1024)


class SketchPatchEncoder(nn.Module):
    """Non-overlapping patch embedding with learned positions."""

    def __init__(self, cfg: PatchEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.proj = nn.Linear(cfg.patch_size ** 2, cfg.d_img)
        self.pos = nn.Parameter(torch.randn(cfg.n_tokens, cfg.d_img) * 0.02)

    def forward(self, sketch: torch.Tensor) -> torch.Tensor:
        """(B, 1, H, W) or (1, H, W) -> (B, n_tokens, d_img) token sequence."""
        squeeze = sketch.dim() == 3
        if squeeze:
            sketch = sketch.unsqueeze(0)
        p = self.cfg.patch_size
        B, _, H, W = sketch.shape
        if (H, W) != (self.cfg.image_size, self.cfg.image_size):
            raise ValueError(f"sketch resolution {(H, W)} does not match encoder config")
        patches = sketch.unfold(2, p, p).unfold(3, p, p)  # (B, 1, H/p, W/p, p, p)
        patches = patches.reshape(B, -1, p * p)
        tokens = self.proj(patches) + self.pos
        return tokens.squeeze(0) if squeeze else tokens


@dataclass(frozen=True)
class TextEncoderConfig:
    vocab_size: int
    L_text: int = 16
    d_text: int = 64


class PromptEncoder(nn.Module):
    """Token embedding + learned positions over a fixed-length id sequence.

    Padding ids use their own learned embedding row, so an empty prompt is
    a perfectly valid input.
    """

    def __init__(self, cfg: TextEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d_text)
        self.pos = nn.Parameter(torch.randn(cfg.L_text, cfg.d_text) * 0.02)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """(B, L_text) or (L_text,) long ids -> token embeddings."""
        if ids.shape[-1] != self.cfg.L_text:
            raise ValueError(f"id sequence length {ids.shape[-1]} != L_text {self.cfg.L_text}")
        return self.embed(ids) + self.pos


@dataclass(frozen=True)
class FusionConfig:
    """Shape/depth parameters of the cross-attention fusion block."""

    L_text: int
    d_text: int
    L_img: int
    d_img: int
    d_hidden: int = 1024
    n_layers: int = 8
    n_heads: int = 8
    ff_mult: int = 4
    param_budget: int | None = None

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.d_hidden % self.n_heads != 0:
            raise ValueError("d_hidden must be divisible by n_heads")

    @classmethod
    def paper_scale(cls) -> "FusionConfig":
        return cls(L_text=77, d_text=768, L_img=256, d_img=1024, d_hidden=1024, n_layers=8, n_heads=8)


class TokenCrossAttention(nn.Module):
    """Query tokens attend over memory tokens (no memory positions)."""

    def __init__(self, dim, n_heads):
        super().__init__()
        self.n_heads = n_heads
        self.to_q = nn.Linear(dim, dim)
        self.to_k = nn.Linear(dim, dim)
        self.to_v = nn.Linear(dim, dim)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, q_tokens, memory):
        B, Lq, D = q_tokens.shape
        hd = D // self.n_heads

        def split(t):
            return t.view(B, -1, self.n_heads, hd).transpose(1, 2)

        q, k, v = split(self.to_q(q_tokens)), split(self.to_k(memory)), split(self.to_v(memory))
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(hd), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, Lq, D)
        return self.to_out(out)


class FusionBlock(nn.Module):
    """Pre-norm cross-attention + feed-forward over the text stream."""

    def __init__(self, dim, n_heads, ff_mult):
        super().__init__()
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = TokenCrossAttention(dim, n_heads)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, dim * ff_mult), nn.GELU(), nn.Linear(dim * ff_mult, dim)
        )

    def forward(self, x, memory):
        x = x + self.attn(self.norm_attn(x), memory)
        return x + self.ff(self.norm_ff(x))


class CrossFuser(nn.Module):
    """Fuses sketch tokens into the text stream.

    Pipeline: 1-D (pointwise) convolutions project both token streams to a
    common hidden width; a stack of cross-attention transformer blocks lets
    text tokens read from the sketch tokens; a learned map over the token
    axis restores the text length; two fully connected layers project back
    to the text width. Output shape: (B, L_text, d_text).
    """

    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.cfg = cfg
        self.img_proj = nn.Conv1d(cfg.d_img, cfg.d_hidden, 1)
        self.txt_proj = nn.Conv1d(cfg.d_text, cfg.d_hidden, 1)
        self.mem_norm = nn.LayerNorm(cfg.d_hidden)
        self.blocks = nn.ModuleList(
            FusionBlock(cfg.d_hidden, cfg.n_heads, cfg.ff_mult) for _ in range(cfg.n_layers)
        )
        self.final_norm = nn.LayerNorm(cfg.d_hidden)
        self.len_proj = nn.Linear(cfg.L_text, cfg.L_text)
        self.out = nn.Sequential(
            nn.Linear(cfg.d_hidden, cfg.d_hidden), nn.GELU(), nn.Linear(cfg.d_hidden, cfg.d_text)
        )
        if cfg.param_budget is not None:
            n = count_parameters_of(self)
            if n > cfg.param_budget:
                raise ValueError(f"fusion block has {n} trainable parameters, over the budget {cfg.param_budget}")

    def forward(self, img_tokens: torch.Tensor, txt_tokens: torch.Tensor) -> torch.Tensor:
        squeeze = txt_tokens.dim() == 2
        if squeeze:
            img_tokens = img_tokens.unsqueeze(0)
            txt_tokens = txt_tokens.unsqueeze(0)
        if img_tokens.shape[-2:] != (self.cfg.L_img, self.cfg.d_img):
            raise ValueError(f"image tokens {tuple(img_tokens.shape)} != (L_img, d_img) of config")
        if txt_tokens.shape[-2:] != (self.cfg.L_text, self.cfg.d_text):
            raise ValueError(f"text tokens {tuple(txt_tokens.shape)} != (L_text, d_text) of config")

        mem = self.img_proj(img_tokens.transpose(1, 2)).transpose(1, 2)
        mem = self.mem_norm(mem)
        x = self.txt_proj(txt_tokens.transpose(1, 2)).transpose(1, 2)
        for block in self.blocks:
            x = block(x, mem)
        x = self.final_norm(x)
        x = self.len_proj(x.transpose(1, 2)).transpose(1, 2)
        x = self.out(x)
        return x.squeeze(0) if squeeze else x


def count_parameters_of(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def count_parameters(cfg: FusionConfig) -> int:
    """Exact trainable parameter count of a fusion block with this config."""
    if cfg.param_budget is not None:
        cfg = dataclasses.replace(cfg, param_budget=None)
    return count_parameters_of(CrossFuser(cfg))
