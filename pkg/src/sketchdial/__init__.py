"""sketchdial: desk-scale sketch-conditioned diffusion with a detail dial.

A small trainable-from-scratch diffusion model conditioned through two
pathways: a coarse cross-attention context fusing sketch and prompt
tokens, and a fine per-level residual adapter over the raw sketch. A tanh
modulator balances the pathways during training; an inference-time knob
(gamma out of S steps) lets the user dial how long fine detail steers
sampling.
"""

from .schedules import (
    KnobConfig,
    ModulatorConfig,
    NoiseSchedule,
    knob_gate,
    make_noise_schedule,
    modulator_value,
    posterior_sigma,
)
from .diffusion import LatentState, add_noise, sample, sample_step, training_loss
from .unet import CondUNet, ConditioningBundle, DenoiserConfig
from .coarse import (
    CrossFuser,
    FusionConfig,
    PatchEncoderConfig,
    PromptEncoder,
    SketchPatchEncoder,
    TextEncoderConfig,
    Vocabulary,
    count_parameters,
)
from .fine import AdapterConfig, SketchAdapter
from .data import (
    DatasetRecord,
    generate_toy_dataset,
    gradient_magnitude,
    ingest_images,
    load_dataset,
    save_dataset,
    sketchify,
    stratify_by_pixel_count,
)
from .metrics import FeatureSet, JointEncoder, fid, prompt_alignment, sketch_conformity, train_joint_encoder
from .config import PipelineConfig
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainingDiverged, train_base, train_cgc
from .pipeline import GenerationPipeline, ModelBundle

__version__ = "0.1.0"
