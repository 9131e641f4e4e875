"""Model bundle (all trainable components behind one config) and the
end-to-end generation pipeline used by the CLI and the HTTP service.
"""

from __future__ import annotations

import numpy as np
import torch

from .checkpoint import Checkpoint, checkpoint_digest, load_checkpoint
from .coarse import CrossFuser, PromptEncoder, SketchPatchEncoder
from .config import PipelineConfig
from .diffusion import sample
from .fine import SketchAdapter
from .schedules import KnobConfig
from .unet import CondUNet

CONTEXT_MODES = ("auto", "fused", "text")


class ModelBundle:
    """Every learnable component plus the schedule, built from one config."""

    COMPONENTS = ("denoiser", "prompt_encoder", "patch_encoder", "fuser", "adapter")

    def __init__(self, config: PipelineConfig, seed: int = 0):
        self.config = config
        self.vocab = config.vocabulary()
        self.schedule = config.schedule()
        torch.manual_seed(seed)
        self.denoiser = CondUNet(config.denoiser_config())
        self.prompt_encoder = PromptEncoder(config.text_config())
        self.patch_encoder = SketchPatchEncoder(config.patch_config())
        self.fuser = CrossFuser(config.fusion_config())
        self.adapter = SketchAdapter(config.adapter_config())

    def modules(self) -> dict:
        return {name: getattr(self, name) for name in self.COMPONENTS}

    def state_arrays(self) -> dict:
        """Component state dicts as float32 numpy arrays (checkpoint payload)."""
        out = {}
        for name, module in self.modules().items():
            out[name] = {
                key: tensor.detach().cpu().numpy().astype("<f4")
                for key, tensor in module.state_dict().items()
            }
        return out

    def load_state_arrays(self, components: dict) -> None:
        for name, module in self.modules().items():
            arrays = components[name]
            state = {key: torch.from_numpy(np.ascontiguousarray(arr)) for key, arr in arrays.items()}
            module.load_state_dict(state)

    def eval(self) -> "ModelBundle":
        for module in self.modules().values():
            module.eval()
        return self

    # -- conditioning helpers -------------------------------------------------

    def prompt_ids(self, prompts) -> torch.Tensor:
        ids = [self.vocab.encode(p, self.config.L_ctx) for p in prompts]
        return torch.tensor(ids, dtype=torch.long)

    def text_context(self, prompts) -> torch.Tensor:
        return self.prompt_encoder(self.prompt_ids(prompts))

    def fused_context(self, sketches: torch.Tensor, prompts) -> torch.Tensor:
        """Coarse context from the fusion block (replaces the text context)."""
        img_tokens = self.patch_encoder(sketches)
        txt_tokens = self.text_context(prompts)
        return self.fuser(img_tokens, txt_tokens)


def sketch_to_tensor(sketch01: np.ndarray) -> torch.Tensor:
    sk = np.asarray(sketch01)
    if not np.all(np.isin(np.unique(sk), (0, 1))):
        raise ValueError("sketch must be binary {0, 1}")
    return torch.as_tensor(sk, dtype=torch.float32)[None, None]


def to_uint8_image(tensor_chw: torch.Tensor) -> np.ndarray:
    """(3, H, W) in [-1, 1] -> (H, W, 3) uint8."""
    arr = tensor_chw.detach().cpu().numpy()
    arr = np.clip((np.transpose(arr, (1, 2, 0)) + 1.0) * 127.5, 0.0, 255.0)
    return np.rint(arr).astype(np.uint8)


class GenerationPipeline:
    """Checkpoint-backed sketch+prompt -> image generator.

    The model is loaded once and treated as read-only; every generate call
    derives its own random generator from the request seed, so concurrent
    requests cannot influence each other.
    """

    def __init__(self, bundle: ModelBundle, phase: str = "base", model_id: str = "unsaved",
                 context_mode: str = "auto"):
        if context_mode not in CONTEXT_MODES:
            raise ValueError(f"context_mode must be one of {CONTEXT_MODES}")
        self.bundle = bundle.eval()
        self.phase = phase
        self.model_id = model_id
        self.context_mode = context_mode

    @classmethod
    def from_checkpoint(cls, path, context_mode: str = "auto") -> "GenerationPipeline":
        ckpt = load_checkpoint(path)
        config = PipelineConfig.from_dict(ckpt.config)
        bundle = ModelBundle(config, seed=0)
        bundle.load_state_arrays(ckpt.components)
        return cls(bundle, phase=ckpt.phase, model_id=checkpoint_digest(path), context_mode=context_mode)

    @property
    def config(self) -> PipelineConfig:
        return self.bundle.config

    def _resolve_mode(self, override=None) -> str:
        mode = override or self.context_mode
        if mode == "auto":
            # base-phase checkpoints have an untrained fusion block
            return "fused" if self.phase in ("cgc", "cgc-finetune") else "text"
        return mode

    @torch.no_grad()
    def generate_tensor(self, sketch01: np.ndarray, prompt: str, gamma: int, steps: int,
                        seed: int, context_mode=None, use_fine: bool = True) -> torch.Tensor:
        knob = KnobConfig(S=int(steps), gamma=int(gamma))
        sk = sketch_to_tensor(sketch01)
        if sk.shape[-2:] != (self.config.image_size, self.config.image_size):
            raise ValueError(
                f"sketch resolution {tuple(sk.shape[-2:])} != model resolution "
                f"{self.config.image_size}"
            )
        mode = self._resolve_mode(context_mode)
        if mode == "fused":
            context = self.bundle.fused_context(sk, [prompt])
        else:
            context = self.bundle.text_context([prompt])
        fine = self.bundle.adapter(sk) if use_fine else None
        out = sample(self.bundle.denoiser, context, fine, knob, self.bundle.schedule, seed)
        return out[0]

    def generate(self, sketch01: np.ndarray, prompt: str, gamma: int, steps: int,
                 seed: int, context_mode=None, use_fine: bool = True) -> np.ndarray:
        """Returns an (H, W, 3) uint8 image."""
        return to_uint8_image(
            self.generate_tensor(sketch01, prompt, gamma, steps, seed, context_mode, use_fine)
        )

    @torch.no_grad()
    def generate_batch(self, sketches01: np.ndarray, prompts, gamma: int, steps: int,
                       seed: int, context_mode=None, use_fine: bool = True) -> torch.Tensor:
        """Sample a whole batch under one shared seed; returns (B, 3, H, W)."""
        sk = torch.as_tensor(np.asarray(sketches01), dtype=torch.float32).unsqueeze(1)
        knob = KnobConfig(S=int(steps), gamma=int(gamma))
        mode = self._resolve_mode(context_mode)
        if mode == "fused":
            context = self.bundle.fused_context(sk, list(prompts))
        else:
            context = self.bundle.text_context(list(prompts))
        fine = self.bundle.adapter(sk) if use_fine else None
        return sample(self.bundle.denoiser, context, fine, knob, self.bundle.schedule, seed)


def bundle_to_checkpoint(bundle: ModelBundle, phase: str, epoch: int,
                         optimizer: dict | None = None, rng_state: bytes | None = None) -> Checkpoint:
    return Checkpoint(
        config=bundle.config.to_dict(),
        phase=phase,
        epoch=epoch,
        components=bundle.state_arrays(),
        optimizer=optimizer,
        rng_state=rng_state,
    )
