"""Two-phase training.

Phase "base" trains the denoiser, the prompt encoder, and the sketch
adapter with raw text context and the fine branch fully on. Phase "cgc"
freezes everything except the fusion block and ramps the fine branch with
the tanh modulator (or pins it at 1 for the ablation arm); phase
"cgc-finetune" continues at a reduced learning rate with the fine branch
held at m_max.

The sketch patch encoder stays at its seeded initialization: the base
loss gives it no gradient path, and the fusion phase treats it as a
frozen feature extractor.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from tqdm import tqdm

from .checkpoint import Checkpoint, save_checkpoint
from .config import PipelineConfig
from .diffusion import training_loss
from .pipeline import ModelBundle, bundle_to_checkpoint
from .schedules import ModulatorConfig, modulator_value
from .unet import ConditioningBundle

log = logging.getLogger(__name__)

PHASES = ("base", "cgc", "cgc-finetune")
GRAD_CLIP_NORM = 1.0
ADAM_BETAS = (0.9, 0.999)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    phase: str
    epochs: int
    lr: float
    batch_size: int = 64
    modulator: ModulatorConfig | None = None
    seed: int = 0
    checkpoint_every: int = 0
    ablate_modulator: bool = False
    # phase "base" only: probability a sample's fine residuals are dropped,
    # so the denoiser stays competent in the coarse-only regime the knob
    # exposes at inference (steps past gamma run with no fine branch)
    fine_dropout: float = 0.0

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.fine_dropout < 1.0:
            raise ValueError("fine_dropout must lie in [0, 1)")


def records_to_tensors(records, vocab, L_ctx: int):
    images = torch.as_tensor(np.stack([r.image for r in records]), dtype=torch.float32)
    sketches = torch.as_tensor(
        np.stack([r.sketch for r in records]), dtype=torch.float32
    ).unsqueeze(1)
    prompt_ids = torch.tensor([vocab.encode(r.prompt, L_ctx) for r in records], dtype=torch.long)
    return images, sketches, prompt_ids


def component_digest(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for key in sorted(module.state_dict()):
        h.update(module.state_dict()[key].detach().cpu().numpy().tobytes())
    return h.hexdigest()


class _JsonlLogger:
    def __init__(self, path):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def write(self, entry: dict):
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry) + "\n")


def _optimizer_payload(optimizer, named_params) -> dict:
    moments, steps = {}, {}
    for name, param in named_params:
        state = optimizer.state.get(param)
        if not state:
            continue
        moments[f"{name}/exp_avg"] = state["exp_avg"].detach().cpu().numpy().astype("<f4")
        moments[f"{name}/exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy().astype("<f4")
        steps[name] = float(state["step"])
    group = optimizer.param_groups[0]
    return {
        "hyper": {"lr": group["lr"], "betas": list(group["betas"]), "weight_decay": group["weight_decay"]},
        "steps": steps,
        "moments": moments,
    }


def _run_epochs(bundle: ModelBundle, cfg: TrainConfig, dataset, trainable: dict,
                frozen: dict, fine_scale_fn, context_fn, log_path=None,
                out_dir=None, progress: bool = False) -> Checkpoint:
    """Shared epoch loop for both phases."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    schedule = bundle.schedule
    images, sketches, prompt_ids = records_to_tensors(dataset, bundle.vocab, bundle.config.L_ctx)

    for module in frozen.values():
        module.requires_grad_(False)
    named_params = [
        (f"{comp}/{pname}", p)
        for comp, module in trainable.items()
        for pname, p in module.named_parameters()
    ]
    optimizer = torch.optim.AdamW(
        [p for _, p in named_params], lr=cfg.lr, betas=ADAM_BETAS, weight_decay=0.0
    )

    frozen_digests = {name: component_digest(m) for name, m in frozen.items()}
    jsonl = _JsonlLogger(log_path)
    g = torch.Generator().manual_seed(cfg.seed)
    n = len(dataset)
    history = []

    epochs = tqdm(range(cfg.epochs), desc=f"train[{cfg.phase}]", disable=not progress)
    for epoch in epochs:
        fine_scale = fine_scale_fn(epoch)
        order = torch.randperm(n, generator=g)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            z0 = images[idx]
            t = torch.randint(1, schedule.T_steps + 1, (len(idx),), generator=g)
            eps = torch.randn(z0.shape, generator=g)
            context = context_fn(sketches[idx], prompt_ids[idx])
            if cfg.phase == "base":
                residuals = bundle.adapter(sketches[idx])  # adapter trains in phase 1
                if cfg.fine_dropout > 0.0:
                    keep = (torch.rand(len(idx), generator=g) >= cfg.fine_dropout).float()
                    residuals = [r * keep.view(-1, 1, 1, 1) for r in residuals]
            elif fine_scale > 0.0:
                with torch.no_grad():
                    residuals = bundle.adapter(sketches[idx])
            else:
                residuals = None
            cond = ConditioningBundle(
                coarse_context=context, fine_residuals=residuals, fine_scale=fine_scale
            )
            loss = training_loss(bundle.denoiser, z0, cond, t, eps, schedule)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss in phase={cfg.phase} epoch={epoch} batch_start={start}"
                )
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_([p for _, p in named_params], GRAD_CLIP_NORM)
            optimizer.step()
            losses.append(loss.item())

        for name, module in frozen.items():
            digest = component_digest(module)
            if digest != frozen_digests[name]:
                raise TrainingDiverged(f"frozen component {name} changed during epoch {epoch}")

        entry = {
            "phase": cfg.phase,
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "fine_scale": fine_scale,
            "lr": cfg.lr,
        }
        history.append(entry)
        jsonl.write(entry)
        if progress:
            epochs.set_postfix(loss=entry["loss"], fine_scale=round(fine_scale, 4))
        if out_dir and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            snap = bundle_to_checkpoint(
                bundle, cfg.phase, epoch + 1,
                optimizer=_optimizer_payload(optimizer, named_params),
                rng_state=bytes(g.get_state().numpy().tobytes()),
            )
            save_checkpoint(snap, Path(out_dir) / f"{cfg.phase}_epoch{epoch + 1:04d}.ckpt")

    ckpt = bundle_to_checkpoint(
        bundle, cfg.phase, cfg.epochs,
        optimizer=_optimizer_payload(optimizer, named_params),
        rng_state=bytes(g.get_state().numpy().tobytes()),
    )
    ckpt.history = history
    return ckpt


def train_base(cfg: TrainConfig, dataset, model_config: PipelineConfig | None = None,
               log_path=None, out_dir=None, progress: bool = False) -> Checkpoint:
    """Phase 1: denoiser + prompt encoder + adapter on raw text context."""
    if cfg.phase != "base":
        raise ValueError("train_base requires phase='base'")
    model_config = model_config or PipelineConfig()
    bundle = ModelBundle(model_config, seed=cfg.seed)

    trainable = {"denoiser": bundle.denoiser, "prompt_encoder": bundle.prompt_encoder,
                 "adapter": bundle.adapter}
    frozen = {"patch_encoder": bundle.patch_encoder, "fuser": bundle.fuser}

    def context_fn(sketch_batch, id_batch):
        return bundle.prompt_encoder(id_batch)

    return _run_epochs(
        bundle, cfg, dataset, trainable, frozen,
        fine_scale_fn=lambda epoch: 1.0,
        context_fn=context_fn,
        log_path=log_path, out_dir=out_dir, progress=progress,
    )


def train_cgc(cfg: TrainConfig, base: Checkpoint, dataset,
              log_path=None, out_dir=None, progress: bool = False) -> Checkpoint:
    """Phase 2: only the fusion block updates; the fine branch follows the
    modulator ramp (phase "cgc"), m_max (phase "cgc-finetune"), or a
    constant 1 when the modulator is ablated."""
    if cfg.phase not in ("cgc", "cgc-finetune"):
        raise ValueError("train_cgc requires phase 'cgc' or 'cgc-finetune'")
    model_config = PipelineConfig.from_dict(base.config)
    bundle = ModelBundle(model_config, seed=cfg.seed)
    bundle.load_state_arrays(base.components)

    modulator = cfg.modulator or ModulatorConfig(T_epochs=max(cfg.epochs, 1))
    if cfg.ablate_modulator:
        fine_scale_fn = lambda epoch: 1.0  # noqa: E731
    elif cfg.phase == "cgc-finetune":
        fine_scale_fn = lambda epoch: modulator.m_max  # noqa: E731
    else:
        fine_scale_fn = lambda epoch: modulator_value(modulator, min(epoch, modulator.T_epochs))  # noqa: E731

    trainable = {"fuser": bundle.fuser}
    frozen = {"denoiser": bundle.denoiser, "prompt_encoder": bundle.prompt_encoder,
              "patch_encoder": bundle.patch_encoder, "adapter": bundle.adapter}

    def context_fn(sketch_batch, id_batch):
        with torch.no_grad():
            img_tokens = bundle.patch_encoder(sketch_batch)
            txt_tokens = bundle.prompt_encoder(id_batch)
        return bundle.fuser(img_tokens, txt_tokens)

    return _run_epochs(
        bundle, cfg, dataset, trainable, frozen,
        fine_scale_fn=fine_scale_fn,
        context_fn=context_fn,
        log_path=log_path, out_dir=out_dir, progress=progress,
    )
