"""Fine controller: residual shapes, the zero-init safe start, gradients."""

import pytest
import torch

from sketchdial import (
    AdapterConfig,
    ConditioningBundle,
    CondUNet,
    DenoiserConfig,
    SketchAdapter,
)

from helpers import finite_difference_check


def toy_adapter(zero_init=True, seed=0):
    torch.manual_seed(seed)
    return SketchAdapter(AdapterConfig(level_channels=(32, 64), downsample_factors=(1, 2),
                                       zero_init_outputs=zero_init))


class TestSketchAdapter:
    def test_shape_contract(self):
        adapter = toy_adapter()
        res = adapter(torch.randint(0, 2, (1, 1, 32, 32)).float())
        assert res[0].shape == (1, 32, 32, 32)
        assert res[1].shape == (1, 64, 16, 16)

    def test_fresh_adapter_outputs_exact_zero(self):
        adapter = toy_adapter()
        res = adapter(torch.ones(2, 1, 32, 32))
        assert all((r == 0).all() for r in res)

    def test_perturbed_heads_produce_signal(self):
        adapter = toy_adapter()
        torch.manual_seed(7)
        for head in adapter.heads:
            for p in head.parameters():
                torch.nn.init.normal_(p, std=0.1)
        sketch = torch.zeros(1, 1, 32, 32)
        sketch[0, 0, 8:24, 8] = 1.0
        res = adapter(sketch)
        assert any(r.norm() > 0 for r in res)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AdapterConfig(level_channels=(8, 16), downsample_factors=(1,))
        with pytest.raises(ValueError):
            AdapterConfig(level_channels=(8,), downsample_factors=(0,))

    def test_deterministic(self):
        adapter = toy_adapter(zero_init=False, seed=3)
        sketch = torch.randint(0, 2, (1, 1, 32, 32)).float()
        assert torch.equal(adapter(sketch)[1], adapter(sketch)[1])

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(9)
        adapter = SketchAdapter(
            AdapterConfig(level_channels=(4, 8), downsample_factors=(1, 2), zero_init_outputs=False)
        ).double()
        g = torch.Generator().manual_seed(10)
        sketch = torch.randint(0, 2, (1, 1, 8, 8), generator=g).double()
        weights = [torch.randn((1, 4, 8, 8), generator=g, dtype=torch.float64),
                   torch.randn((1, 8, 4, 4), generator=g, dtype=torch.float64)]

        def loss_fn():
            res = adapter(sketch)
            return sum((r * w).sum() for r, w in zip(res, weights))

        rel = finite_difference_check(list(adapter.parameters()), loss_fn, n_coords=48, h=1e-5)
        assert rel < 1e-4


class TestZeroInitSafeStart:
    def test_insertion_is_bitwise_noop(self):
        cfg = DenoiserConfig(base_channels=8, channel_multipliers=(1, 2), attention_levels=(1,),
                             d_ctx=16, L_ctx=4, image_size=16, image_channels=3, T_steps=20,
                             n_heads=2, norm_groups=4)
        torch.manual_seed(11)
        net = CondUNet(cfg)
        for p in net.out_conv.parameters():
            torch.nn.init.normal_(p, std=0.05)
        adapter = SketchAdapter(AdapterConfig(level_channels=cfg.level_channels,
                                              downsample_factors=(1, 2)))
        g = torch.Generator().manual_seed(12)
        z = torch.randn((2, 3, 16, 16), generator=g)
        ctx = torch.randn((2, 4, 16), generator=g)
        sketch = torch.randint(0, 2, (2, 1, 16, 16), generator=g).float()
        res = adapter(sketch)
        with torch.no_grad():
            plain = net(z, 5, ConditioningBundle(coarse_context=ctx))
            with_adapter = net(z, 5, ConditioningBundle(coarse_context=ctx,
                                                        fine_residuals=res, fine_scale=1.0))
        assert torch.equal(plain, with_adapter)

    def test_residual_shapes_checked_on_forward(self):
        cfg = DenoiserConfig(base_channels=8, channel_multipliers=(1, 2), attention_levels=(1,),
                             d_ctx=16, L_ctx=4, image_size=16, image_channels=3, T_steps=20,
                             n_heads=2, norm_groups=4)
        torch.manual_seed(13)
        net = CondUNet(cfg)
        z = torch.randn(1, 3, 16, 16)
        ctx = torch.randn(1, 4, 16)
        bad = [torch.zeros(1, 8, 16, 16), torch.zeros(1, 16, 4, 4)]  # wrong level-1 size
        with pytest.raises(ValueError):
            net(z, 1, ConditioningBundle(coarse_context=ctx, fine_residuals=bad, fine_scale=1.0))
