"""Evaluation metrics: Fréchet distance over pluggable features, prompt
alignment via a small contrastively trained joint encoder, and a tolerant
sketch-conformity IoU.

The default feature extractor is the joint encoder's image tower, so
absolute Fréchet values are NOT comparable to numbers computed with any
pretrained feature network; only relative comparisons within this
artifact are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy import ndimage

from .data import gradient_magnitude, sketchify

EIGENVALUE_TOLERANCE = -1e-6


@dataclass(frozen=True)
class FeatureSet:
    """Feature rows (N, D) plus a tag naming where they came from."""

    features: np.ndarray
    source: str = ""

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D (N, D) array")
        object.__setattr__(self, "features", feats)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() < EIGENVALUE_TOLERANCE:
        raise ValueError(f"matrix is not PSD within tolerance (min eigenvalue {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b) -> float:
    """||mu_a - mu_b||^2 + tr(cov_a + cov_b - 2 (cov_a cov_b)^{1/2}).

    The cross term uses the symmetric form sqrt(Sa) Sb sqrt(Sa), whose
    eigenvalues are clipped at the -1e-6 tolerance against numerical noise.
    """
    mu_a, mu_b = np.asarray(mu_a, dtype=np.float64), np.asarray(mu_b, dtype=np.float64)
    cov_a, cov_b = np.atleast_2d(cov_a).astype(np.float64), np.atleast_2d(cov_b).astype(np.float64)
    diff = mu_a - mu_b
    sqrt_a = _sqrtm_psd(cov_a)
    inner = sqrt_a @ cov_b @ sqrt_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if vals.min() < EIGENVALUE_TOLERANCE:
        raise ValueError(f"cross covariance is not PSD within tolerance (min eigenvalue {vals.min():.3e})")
    trace_cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_cross)
    return max(value, 0.0)


def fid(a: FeatureSet, b: FeatureSet) -> float:
    """Fréchet distance between Gaussian fits of two feature sets."""
    if a.dim != b.dim:
        raise ValueError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    for fs in (a, b):
        if fs.n < fs.dim + 1:
            raise ValueError(
                f"need at least D + 1 = {fs.dim + 1} rows for covariance estimation, got {fs.n}"
            )
    mu_a, mu_b = a.features.mean(axis=0), b.features.mean(axis=0)
    cov_a = np.cov(a.features, rowvar=False)
    cov_b = np.cov(b.features, rowvar=False)
    return frechet_from_moments(mu_a, cov_a, mu_b, cov_b)


def prompt_alignment(images, prompts, joint_encoder) -> float:
    """Mean cosine similarity between image and prompt embeddings."""
    if len(images) != len(prompts):
        raise ValueError("need equally many images and prompts")
    with torch.no_grad():
        img_emb = joint_encoder.encode_images(images)
        txt_emb = joint_encoder.encode_prompts(prompts)
    for emb in (img_emb, txt_emb):
        if (emb.norm(dim=1) == 0).any():
            raise ValueError("zero-norm embedding; cosine similarity undefined")
    img_emb = F.normalize(img_emb, dim=1)
    txt_emb = F.normalize(txt_emb, dim=1)
    return float((img_emb * txt_emb).sum(dim=1).mean())


def binary_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def sketch_conformity(generated: np.ndarray, sketch: np.ndarray, threshold: int = 50) -> float:
    """Tolerant IoU between the generated image's edges and the sketch.

    The generated image's gradient-magnitude edge map is thresholded like
    any other sketch; matches are counted against the sketch dilated by one
    pixel so a one-pixel registration error is not penalized:
    |E & dilate(S)| / |E | S|, with both-empty defined as 1.
    """
    generated = np.asarray(generated)
    if generated.ndim == 3:  # channel-first in [-1, 1]
        gray = generated.mean(axis=0) if generated.shape[0] == 3 else generated.mean(axis=-1)
        gray = (gray + 1.0) * 127.5 if generated.min() < 0 else gray
    else:
        gray = generated
    if gray.shape != sketch.shape:
        raise ValueError("generated image and sketch resolutions must match")
    edges = sketchify(gradient_magnitude(gray), threshold).astype(bool)
    s = sketch.astype(bool)
    dilated = ndimage.binary_dilation(s, structure=np.ones((3, 3), dtype=bool))
    union = np.logical_or(edges, s).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(edges, dilated).sum() / union)


class JointEncoder(nn.Module):
    """Tiny two-tower image/text embedding trained contrastively.

    Serves two roles: its image tower is the default Fréchet feature
    extractor, and both towers together score prompt alignment.
    """

    def __init__(self, vocab, embed_dim: int = 32, image_channels: int = 3):
        super().__init__()
        self.vocab = vocab
        self.embed_dim = embed_dim
        self.image_tower = nn.Sequential(
            nn.Conv2d(image_channels, 16, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
            nn.Linear(64, embed_dim),
        )
        self.token_embed = nn.Embedding(len(vocab), 48)
        self.text_head = nn.Sequential(nn.Linear(48, 64), nn.SiLU(), nn.Linear(64, embed_dim))
        self.logit_scale = nn.Parameter(torch.tensor(np.log(1 / 0.07), dtype=torch.float32))

    def encode_images(self, images) -> torch.Tensor:
        """images: (N, 3, H, W) tensor/array in [-1, 1] -> (N, D)."""
        if not torch.is_tensor(images):
            images = torch.as_tensor(np.asarray(images), dtype=torch.float32)
        return self.image_tower(images)

    def encode_prompts(self, prompts, max_len: int = 16) -> torch.Tensor:
        ids = torch.tensor([self.vocab.encode(p, max_len) for p in prompts], dtype=torch.long)
        emb = self.token_embed(ids)
        mask = (ids != self.vocab.pad_id).float().unsqueeze(-1)
        pooled = (emb * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)
        return self.text_head(pooled)

    def image_features(self, images) -> FeatureSet:
        with torch.no_grad():
            feats = self.encode_images(images).numpy()
        return FeatureSet(features=feats, source="joint-encoder/image-tower")


def train_joint_encoder(records, vocab, embed_dim: int = 32, epochs: int = 8,
                        batch_size: int = 64, lr: float = 2e-3, seed: int = 0) -> JointEncoder:
    """Symmetric InfoNCE over (image, prompt) pairs from the records."""
    torch.manual_seed(seed)
    enc = JointEncoder(vocab, embed_dim=embed_dim, image_channels=records[0].image.shape[0])
    opt = torch.optim.AdamW(enc.parameters(), lr=lr, betas=(0.9, 0.999), weight_decay=0.0)
    images = torch.as_tensor(np.stack([r.image for r in records]), dtype=torch.float32)
    prompts = [r.prompt for r in records]
    g = torch.Generator().manual_seed(seed)
    n = len(records)
    for _ in range(epochs):
        order = torch.randperm(n, generator=g)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            if len(idx) < 2:
                continue
            img = enc.encode_images(images[idx])
            txt = enc.encode_prompts([prompts[i] for i in idx])
            img = F.normalize(img, dim=1)
            txt = F.normalize(txt, dim=1)
            logits = enc.logit_scale.exp() * img @ txt.t()
            target = torch.arange(len(idx))
            loss = 0.5 * (F.cross_entropy(logits, target) + F.cross_entropy(logits.t(), target))
            opt.zero_grad()
            loss.backward()
            opt.step()
    enc.eval()
    return enc
