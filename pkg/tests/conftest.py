import numpy as np
import pytest
import torch

from sketchdial import (
    ModulatorConfig,
    PipelineConfig,
    TrainConfig,
    generate_toy_dataset,
    save_checkpoint,
    train_base,
    train_cgc,
)

TINY_MODEL = dict(
    image_size=16,
    base_channels=8,
    channel_multipliers=(1, 2),
    attention_levels=(1,),
    L_ctx=8,
    d_ctx=32,
    patch_size=4,
    d_img=32,
    fusion_hidden=32,
    fusion_layers=2,
    fusion_heads=2,
    T_steps=50,
)


@pytest.fixture(scope="session")
def tiny_config():
    return PipelineConfig(**TINY_MODEL)


@pytest.fixture(scope="session")
def toy_records():
    return generate_toy_dataset(48, image_size=16, seed=101)


@pytest.fixture(scope="session")
def tiny_checkpoints(tmp_path_factory, tiny_config, toy_records):
    """Base + cgc checkpoints from a very short training run, for CLI and
    service tests that need a loadable model, not a good one."""
    root = tmp_path_factory.mktemp("ckpts")
    base = train_base(
        TrainConfig(phase="base", epochs=2, lr=1e-3, batch_size=16, seed=5),
        toy_records,
        tiny_config,
    )
    base_path = root / "base.ckpt"
    save_checkpoint(base, base_path)
    cgc = train_cgc(
        TrainConfig(phase="cgc", epochs=2, lr=1e-3, batch_size=16, seed=5,
                    modulator=ModulatorConfig(T_epochs=2)),
        base,
        toy_records,
    )
    cgc_path = root / "cgc.ckpt"
    save_checkpoint(cgc, cgc_path)
    return {"base": base_path, "cgc": cgc_path}


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(0)
