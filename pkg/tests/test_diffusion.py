"""Diffusion algebra: noising, loss, ancestral step, respacing, sampling."""

import numpy as np
import pytest
import torch

from sketchdial import (
    ConditioningBundle,
    CondUNet,
    DenoiserConfig,
    KnobConfig,
    LatentState,
    NoiseSchedule,
    add_noise,
    make_noise_schedule,
    sample,
    sample_step,
    training_loss,
)
from sketchdial.diffusion import respaced_schedule, strided_timesteps

from helpers import finite_difference_check


def small_denoiser(seed=0, double=False):
    cfg = DenoiserConfig(
        base_channels=8, channel_multipliers=(1, 2), attention_levels=(1,),
        d_ctx=16, L_ctx=4, image_size=8, image_channels=2, T_steps=10,
        n_heads=2, norm_groups=4,
    )
    torch.manual_seed(seed)
    net = CondUNet(cfg)
    # the output conv starts zeroed; randomize it so outputs are non-trivial
    for p in net.out_conv.parameters():
        torch.nn.init.normal_(p, std=0.05)
    return net.double() if double else net


class TestAddNoise:
    def test_identity_when_alpha_bar_one(self):
        sch = make_noise_schedule(1, 1e-12, 1e-12)  # alpha_bar ~ 1
        z0 = torch.randn(3, 4)
        out = add_noise(z0, torch.randn(3, 4), 1, sch)
        torch.testing.assert_close(out, z0, rtol=0, atol=1e-6)

    def test_pure_noise_limit(self):
        betas = np.full(40, 0.6)
        sch = NoiseSchedule(betas=betas)  # alpha_bar_40 ~ 1e-16
        z0 = torch.randn(5)
        eps = torch.randn(5)
        out = add_noise(z0, eps, 40, sch)
        torch.testing.assert_close(out, eps, rtol=0, atol=1e-6)

    def test_hand_computed(self):
        sch = make_noise_schedule(1, 0.75, 0.75)  # alpha_bar = 0.25
        out = add_noise(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0]), 1, sch)
        torch.testing.assert_close(out, torch.tensor([0.5, 0.8660254]), atol=1e-6, rtol=0)

    def test_shape_mismatch_rejected(self):
        sch = make_noise_schedule(2, 0.1, 0.2)
        with pytest.raises(ValueError):
            add_noise(torch.zeros(3), torch.zeros(4), 1, sch)
        with pytest.raises(ValueError):
            add_noise(torch.zeros(3), torch.zeros(3), 3, sch)

    def test_latent_state_round_trips_type(self):
        sch = make_noise_schedule(4, 0.1, 0.2)
        state = LatentState(data=torch.randn(2, 3, 3), t=0)
        out = add_noise(state, torch.randn(2, 3, 3), 2, sch)
        assert isinstance(out, LatentState)
        assert out.t == 2

    def test_empirical_mean_matches_sqrt_alpha_bar(self):
        sch = make_noise_schedule(10, 0.02, 0.3)
        t = 6
        z0 = torch.tensor([0.8, -0.4, 1.3, 0.1])
        g = torch.Generator().manual_seed(99)
        draws = torch.stack([
            add_noise(z0, torch.randn(4, generator=g), t, sch) for _ in range(10_000)
        ])
        expected = np.sqrt(sch.alpha_bar(t)) * z0
        stderr = np.sqrt(1.0 - sch.alpha_bar(t)) / np.sqrt(10_000)
        assert (draws.mean(0) - expected).abs().max() < 3 * stderr


class TestTrainingLoss:
    def _setup(self):
        net = small_denoiser(seed=1)
        sch = make_noise_schedule(10, 0.01, 0.2)
        g = torch.Generator().manual_seed(2)
        z0 = torch.randn((4, 2, 8, 8), generator=g)
        ctx = torch.randn((4, 4, 16), generator=g)
        t = torch.randint(1, 11, (4,), generator=g)
        eps = torch.randn(z0.shape, generator=g)
        return net, sch, z0, ctx, t, eps

    def test_zero_for_perfect_prediction(self):
        sch = make_noise_schedule(5, 0.1, 0.2)
        eps = torch.randn(2, 3, 4, 4)

        class Perfect:
            def __call__(self, z, t, cond):
                return eps

        loss = training_loss(Perfect(), torch.randn(2, 3, 4, 4),
                             ConditioningBundle(coarse_context=torch.zeros(1, 1)),
                             torch.tensor([1, 2]), eps, sch)
        assert float(loss) == 0.0

    def test_mean_of_squares_hand_case(self):
        sch = make_noise_schedule(1, 0.5, 0.5)

        class Zero:
            def __call__(self, z, t, cond):
                return torch.zeros_like(z)

        eps = torch.tensor([[1.0, -1.0]])
        loss = training_loss(Zero(), torch.zeros(1, 2),
                             ConditioningBundle(coarse_context=torch.zeros(1, 1)),
                             torch.tensor([1]), eps, sch)
        assert float(loss) == pytest.approx(1.0, abs=1e-7)

    def test_batch_order_invariance(self):
        net, sch, z0, ctx, t, eps = self._setup()
        cond = ConditioningBundle(coarse_context=ctx)
        loss = training_loss(net, z0, cond, t, eps, sch)
        perm = torch.tensor([2, 0, 3, 1])
        cond_p = ConditioningBundle(coarse_context=ctx[perm])
        loss_p = training_loss(net, z0[perm], cond_p, t[perm], eps[perm], sch)
        torch.testing.assert_close(loss, loss_p, rtol=1e-6, atol=1e-7)

    def test_nonnegative(self):
        net, sch, z0, ctx, t, eps = self._setup()
        loss = training_loss(net, z0, ConditioningBundle(coarse_context=ctx), t, eps, sch)
        assert loss.item() >= 0.0

    def test_denoiser_gradients_match_finite_differences(self):
        net = small_denoiser(seed=3, double=True)
        sch = make_noise_schedule(10, 0.01, 0.2)
        g = torch.Generator().manual_seed(4)
        z0 = torch.randn((2, 2, 8, 8), generator=g, dtype=torch.float64)
        ctx = torch.randn((2, 4, 16), generator=g, dtype=torch.float64)
        t = torch.tensor([3, 7])
        eps = torch.randn(z0.shape, generator=g, dtype=torch.float64)
        cond = ConditioningBundle(coarse_context=ctx)
        params = [p for p in net.parameters() if p.requires_grad]

        rel = finite_difference_check(
            params, lambda: training_loss(net, z0, cond, t, eps, sch), n_coords=40, h=1e-5,
        )
        assert rel < 1e-4


class TestSampleStep:
    def test_single_step_round_trip(self):
        sch = make_noise_schedule(1, 0.75, 0.75)  # alpha_bar_1 = 0.25
        z0 = torch.tensor([2.0])
        eps = torch.tensor([1.0])
        z1 = add_noise(z0, eps, 1, sch)
        torch.testing.assert_close(z1, torch.tensor([1.8660254]), atol=1e-6, rtol=0)
        rec = sample_step(z1, 1, eps, sch)
        torch.testing.assert_close(rec, z0, atol=1e-5, rtol=1e-5)

    def test_round_trip_any_values(self, rng):
        beta = float(rng.uniform(0.05, 0.95))
        sch = make_noise_schedule(1, beta, beta)
        z0 = torch.as_tensor(rng.normal(size=(3, 5, 5)), dtype=torch.float32)
        eps = torch.as_tensor(rng.normal(size=(3, 5, 5)), dtype=torch.float32)
        rec = sample_step(add_noise(z0, eps, 1, sch), 1, eps, sch)
        torch.testing.assert_close(rec, z0, rtol=1e-5, atol=1e-5)

    def test_final_step_ignores_noise(self):
        sch = make_noise_schedule(3, 0.1, 0.3)
        z = torch.randn(4)
        eps_hat = torch.randn(4)
        a = sample_step(z, 1, eps_hat, sch, noise=torch.randn(4))
        b = sample_step(z, 1, eps_hat, sch, noise=None)
        assert torch.equal(a, b)

    def test_shape_contract(self):
        sch = make_noise_schedule(3, 0.1, 0.3)
        z = torch.randn(2, 3, 4, 4)
        out = sample_step(z, 2, torch.randn_like(z), sch, noise=torch.randn_like(z))
        assert out.shape == z.shape


class TestRespacing:
    def test_strided_includes_endpoints(self):
        ts = strided_timesteps(1000, 50)
        assert ts[0] == 1000 and ts[-1] == 1
        assert len(ts) == 50
        assert all(a > b for a, b in zip(ts, ts[1:]))

    def test_full_respacing_recovers_schedule(self):
        sch = make_noise_schedule(20, 1e-3, 0.1)
        sub = respaced_schedule(sch, strided_timesteps(20, 20))
        np.testing.assert_allclose(sub.betas, sch.betas, rtol=1e-10)

    def test_alpha_bars_match_selected_timesteps(self):
        sch = make_noise_schedule(100, 1e-4, 0.05)
        ts = strided_timesteps(100, 7)
        sub = respaced_schedule(sch, ts)
        for j, t in enumerate(reversed(ts), start=1):
            assert sub.alpha_bar(j) == pytest.approx(sch.alpha_bar(t), rel=1e-12)

    def test_invalid_s(self):
        with pytest.raises(ValueError):
            strided_timesteps(10, 11)
        with pytest.raises(ValueError):
            strided_timesteps(10, 0)


class TestSampleLoop:
    def _inputs(self, seed=0):
        net = small_denoiser(seed=seed)
        g = torch.Generator().manual_seed(seed + 100)
        ctx = torch.randn((4, 16), generator=g)
        fine = [torch.randn((8, 8, 8), generator=g), torch.randn((16, 4, 4), generator=g)]
        sch = make_noise_schedule(10, 0.01, 0.2)
        return net, ctx, fine, sch

    def test_deterministic_given_seed(self):
        net, ctx, fine, sch = self._inputs()
        knob = KnobConfig(S=5, gamma=3)
        a = sample(net, ctx, fine, knob, sch, seed=42)
        b = sample(net, ctx, fine, knob, sch, seed=42)
        assert torch.equal(a, b)
        c = sample(net, ctx, fine, knob, sch, seed=43)
        assert not torch.equal(a, c)

    def test_gamma_zero_equals_coarse_only(self):
        net, ctx, fine, sch = self._inputs()
        gated = sample(net, ctx, fine, KnobConfig(S=5, gamma=0), sch, seed=7)
        coarse = sample(net, ctx, None, KnobConfig(S=5, gamma=0), sch, seed=7)
        assert torch.equal(gated, coarse)

    def test_output_clipped_and_shaped(self):
        net, ctx, fine, sch = self._inputs()
        out = sample(net, ctx, fine, KnobConfig(S=4, gamma=2), sch, seed=1)
        assert out.shape == (2, 8, 8)
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_trajectories_diverge_only_after_smaller_gamma(self):
        net, ctx, fine, sch = self._inputs(seed=5)
        g_small, g_large = 2, 4
        traces = {}
        for gamma in (g_small, g_large):
            states = []
            sample(net, ctx, fine, KnobConfig(S=6, gamma=gamma), sch, seed=3,
                   on_step=lambda s, t, z: states.append(z.clone()))
            traces[gamma] = states
        for s in range(g_small):  # identical through step gamma_small
            assert torch.equal(traces[g_small][s], traces[g_large][s])
        assert not torch.equal(traces[g_small][g_small], traces[g_large][g_small])

    def test_batched_contexts(self):
        net, ctx, fine, sch = self._inputs()
        batched_ctx = torch.stack([ctx, ctx + 0.1])
        out = sample(net, batched_ctx, None, KnobConfig(S=3, gamma=0), sch, seed=2)
        assert out.shape == (2, 2, 8, 8)
