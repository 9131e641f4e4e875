"""Denoiser forward contract."""

import pytest
import torch

from sketchdial import ConditioningBundle, CondUNet, DenoiserConfig


def build(seed=0, **overrides):
    cfg = dict(base_channels=8, channel_multipliers=(1, 2), attention_levels=(1,),
               d_ctx=16, L_ctx=4, image_size=16, image_channels=3, T_steps=20,
               n_heads=2, norm_groups=4)
    cfg.update(overrides)
    torch.manual_seed(seed)
    net = CondUNet(DenoiserConfig(**cfg))
    for p in net.out_conv.parameters():
        torch.nn.init.normal_(p, std=0.05)
    return net


class TestDenoiserForward:
    def test_output_shape_matches_input(self):
        for mults, attn in (((1, 2), (1,)), ((1, 2, 2), (1, 2)), ((1,), (0,))):
            net = build(channel_multipliers=mults, attention_levels=attn)
            z = torch.randn(2, 3, 16, 16)
            ctx = torch.randn(2, 4, 16)
            out = net(z, 3, ConditioningBundle(coarse_context=ctx))
            assert out.shape == z.shape

    def test_unbatched_input(self):
        net = build()
        out = net(torch.randn(3, 16, 16), 1, ConditioningBundle(coarse_context=torch.randn(4, 16)))
        assert out.shape == (3, 16, 16)

    def test_deterministic(self):
        net = build(seed=2)
        z = torch.randn(1, 3, 16, 16)
        cond = ConditioningBundle(coarse_context=torch.randn(1, 4, 16))
        assert torch.equal(net(z, 5, cond), net(z, 5, cond))

    def test_zero_residuals_any_scale_bit_identical(self):
        net = build(seed=3)
        g = torch.Generator().manual_seed(4)
        z = torch.randn((2, 3, 16, 16), generator=g)
        ctx = torch.randn((2, 4, 16), generator=g)
        zeros = [torch.zeros(2, 8, 16, 16), torch.zeros(2, 16, 8, 8)]
        out0 = net(z, 2, ConditioningBundle(coarse_context=ctx, fine_residuals=zeros, fine_scale=0.0))
        out1 = net(z, 2, ConditioningBundle(coarse_context=ctx, fine_residuals=zeros, fine_scale=1.0))
        assert torch.equal(out0, out1)

    def test_context_actually_conditions(self):
        net = build(seed=5)
        g = torch.Generator().manual_seed(8)
        z = torch.randn((1, 3, 16, 16), generator=g)
        a = net(z, 2, ConditioningBundle(coarse_context=torch.randn((1, 4, 16), generator=g)))
        b = net(z, 2, ConditioningBundle(coarse_context=torch.randn((1, 4, 16), generator=g)))
        assert not torch.equal(a, b)

    def test_timestep_actually_conditions(self):
        net = build(seed=6)
        z = torch.randn(1, 3, 16, 16)
        cond = ConditioningBundle(coarse_context=torch.randn(1, 4, 16))
        assert not torch.equal(net(z, 1, cond), net(z, 19, cond))

    def test_rejects_bad_inputs(self):
        net = build()
        ctx = torch.randn(1, 4, 16)
        with pytest.raises(ValueError):
            net(torch.randn(1, 3, 8, 8), 1, ConditioningBundle(coarse_context=ctx))
        with pytest.raises(ValueError):
            net(torch.full((1, 3, 16, 16), float("nan")), 1, ConditioningBundle(coarse_context=ctx))
        with pytest.raises(ValueError):
            net(torch.randn(1, 3, 16, 16), 1, ConditioningBundle(coarse_context=torch.randn(1, 5, 16)))
        with pytest.raises(ValueError):
            ConditioningBundle(coarse_context=ctx, fine_scale=1.5)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DenoiserConfig(channel_multipliers=(1, 2), attention_levels=(5,))
        with pytest.raises(ValueError):
            DenoiserConfig(image_size=30, channel_multipliers=(1, 2, 2))
