"""Denoiser tests: schedule algebra, token plumbing, and sampling identities."""

import numpy as np
import pytest

from depthgate.autodiff import Tape, constant
from depthgate.errors import ConfigError, ShapeError
from depthgate.expert import (
    DiffusionSchedule,
    expert_forward,
    init_expert,
    make_noisy,
    patchify,
    sample_actions,
)


def tiny_expert(k_steps=4, n_layers=2, seed=0):
    return init_expert(image_size=8, patch_size=4, d_main=16, n_layers=n_layers,
                       horizon=3, d_action=4, d_state=5, k_steps=k_steps,
                       beta_start=0.1, beta_end=0.7, mlp_ratio=2, seed=seed)


def tiny_inputs(p, seed=0):
    rng = np.random.default_rng(seed)
    image = rng.random((p.image_size, p.image_size))
    state = rng.normal(size=p.d_state)
    a_t = rng.normal(size=(p.horizon, p.d_action))
    return image, state, a_t


class TestSchedule:
    def test_linear_values(self):
        sch = DiffusionSchedule.linear(8, 0.1, 0.7)
        assert np.array_equal(sch.betas, np.linspace(0.1, 0.7, 8))
        assert np.array_equal(sch.alpha_bar, np.cumprod(1.0 - sch.betas))
        assert sch.k == 8

    def test_abar_conventions(self):
        sch = DiffusionSchedule.linear(4, 0.1, 0.7)
        assert sch.abar(0) == 1.0
        assert sch.abar(4) == sch.alpha_bar[-1]
        with pytest.raises(ConfigError):
            sch.abar(5)
        with pytest.raises(ConfigError):
            sch.abar(-1)

    def test_rejects_bad_betas(self):
        with pytest.raises(ConfigError):
            DiffusionSchedule.linear(4, 0.0, 0.7)
        with pytest.raises(ConfigError):
            DiffusionSchedule.linear(4, 0.1, 1.0)
        with pytest.raises(ConfigError):
            DiffusionSchedule.linear(0, 0.1, 0.7)

    def test_rejects_inconsistent_alpha_bar(self):
        betas = np.linspace(0.1, 0.7, 4)
        with pytest.raises(ConfigError, match="cumulative"):
            DiffusionSchedule(betas=betas, alpha_bar=np.cumprod(1.0 - betas) * 1.001)


class TestPatchify:
    def test_row_major_patch_order(self):
        img = np.arange(16.0).reshape(4, 4)
        out = patchify(img, 2)
        assert out.shape == (4, 4)
        assert out[0].tolist() == [0.0, 1.0, 4.0, 5.0]   # top-left patch
        assert out[1].tolist() == [2.0, 3.0, 6.0, 7.0]   # top-right
        assert out[2].tolist() == [8.0, 9.0, 12.0, 13.0]  # bottom-left

    def test_shape_checks(self):
        with pytest.raises(ShapeError):
            patchify(np.zeros((4, 6)), 2)
        with pytest.raises(ShapeError):
            patchify(np.zeros((6, 6)), 4)


class TestForward:
    def test_output_shapes(self):
        p = tiny_expert()
        image, state, a_t = tiny_inputs(p)
        with Tape():
            out = expert_forward(image, state, constant(a_t), 2, p)
        assert out.eps_hat.shape == (3, 4)
        assert len(out.hidden) == len(out.attention) == 2
        n_tokens = p.n_patches + 1 + p.horizon
        assert all(h.shape == (n_tokens, 16) for h in out.hidden)

    def test_attention_rows_are_distributions(self):
        p = tiny_expert()
        image, state, a_t = tiny_inputs(p)
        with Tape():
            out = expert_forward(image, state, constant(a_t), 1, p)
        for probs in out.attention:
            a = probs.data
            assert (a >= 0.0).all()
            assert np.abs(a.sum(axis=-1) - 1.0).max() < 1e-12

    def test_zero_injections_match_none_exactly(self):
        p = tiny_expert()
        image, state, a_t = tiny_inputs(p)
        n_tokens = p.n_patches + 1 + p.horizon
        with Tape():
            plain = expert_forward(image, state, constant(a_t), 3, p).eps_hat.data.copy()
        with Tape():
            zeros = [constant(np.zeros((n_tokens, 16))) for _ in range(2)]
            gated = expert_forward(image, state, constant(a_t), 3, p,
                                   injections=zeros).eps_hat.data
        assert gated.tobytes() == plain.tobytes()

    def test_forward_is_deterministic(self):
        image, state, a_t = tiny_inputs(tiny_expert())
        outs = []
        for _ in range(2):
            p = tiny_expert()
            with Tape():
                outs.append(expert_forward(image, state, constant(a_t), 2, p).eps_hat.data)
        assert outs[0].tobytes() == outs[1].tobytes()

    def test_injection_actually_changes_output(self):
        p = tiny_expert()
        image, state, a_t = tiny_inputs(p)
        n_tokens = p.n_patches + 1 + p.horizon
        with Tape():
            plain = expert_forward(image, state, constant(a_t), 1, p).eps_hat.data.copy()
        with Tape():
            bump = [constant(np.full((n_tokens, 16), 0.1)) for _ in range(2)]
            pushed = expert_forward(image, state, constant(a_t), 1, p,
                                    injections=bump).eps_hat.data
        assert not np.array_equal(pushed, plain)

    def test_input_validation(self):
        p = tiny_expert()
        image, state, a_t = tiny_inputs(p)
        with Tape():
            with pytest.raises(ConfigError):
                expert_forward(image, state, constant(a_t), 0, p)
            with pytest.raises(ConfigError):
                expert_forward(image, state, constant(a_t), 5, p)
            with pytest.raises(ShapeError):
                expert_forward(image, state[:3], constant(a_t), 1, p)
            with pytest.raises(ShapeError):
                expert_forward(image, state, constant(a_t[:, :2]), 1, p)
            with pytest.raises(ShapeError):
                expert_forward(image, state, constant(a_t), 1, p,
                               injections=[constant(np.zeros((1, 1)))])

    def test_init_validation(self):
        with pytest.raises(ConfigError):
            tiny_expert(n_layers=0)
        with pytest.raises(ConfigError):
            init_expert(image_size=10, patch_size=4, d_main=8, n_layers=1,
                        horizon=2, d_action=3, d_state=3, k_steps=2,
                        beta_start=0.1, beta_end=0.2)


def test_make_noisy_formula():
    sch = DiffusionSchedule.linear(4, 0.1, 0.7)
    a = np.array([[1.0, -2.0], [0.5, 3.0]])
    eps = np.array([[0.2, 0.1], [-0.4, 0.0]])
    got = make_noisy(a, 3, eps, sch)
    ab = sch.abar(3)
    assert np.array_equal(got, np.sqrt(ab) * a + np.sqrt(1.0 - ab) * eps)
    with pytest.raises(ConfigError):
        make_noisy(a, 0, eps, sch)


class TestSampling:
    def test_zero_denoiser_closed_form(self):
        # eps_hat = 0 collapses the recursion to x / sqrt(abar(K))
        p = tiny_expert(k_steps=6)
        image, state, _ = tiny_inputs(p)
        out = sample_actions(image, state, p, seed=7, eps_fn=lambda x, t: np.zeros_like(x))
        x0 = np.random.default_rng(7).standard_normal((p.horizon, p.d_action))
        np.testing.assert_allclose(out, x0 / np.sqrt(p.schedule.abar(6)), rtol=1e-12)

    def test_single_step_closed_form(self):
        p = tiny_expert(k_steps=1)
        image, state, _ = tiny_inputs(p)
        c = np.full((p.horizon, p.d_action), 0.3)
        out = sample_actions(image, state, p, seed=5, eps_fn=lambda x, t: c)
        x0 = np.random.default_rng(5).standard_normal((p.horizon, p.d_action))
        ab1 = p.schedule.abar(1)
        expected = (x0 - np.sqrt(1.0 - ab1) * c) / np.sqrt(ab1)
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)

    def test_oracle_denoiser_recovers_target(self):
        # a denoiser that always points at A makes sampling return exactly A
        p = tiny_expert(k_steps=8)
        image, state, _ = tiny_inputs(p)
        target = np.random.default_rng(9).normal(size=(p.horizon, p.d_action))

        def oracle(x, t):
            ab = p.schedule.abar(t)
            return (x - np.sqrt(ab) * target) / np.sqrt(1.0 - ab)

        out = sample_actions(image, state, p, seed=3, eps_fn=oracle)
        np.testing.assert_allclose(out, target, atol=1e-9)

    def test_seed_determinism(self):
        p = tiny_expert()
        image, state, _ = tiny_inputs(p)
        a = sample_actions(image, state, p, seed=1)
        b = sample_actions(image, state, p, seed=1)
        c = sample_actions(image, state, p, seed=2)
        assert a.tobytes() == b.tobytes()
        assert not np.array_equal(a, c)

    def test_provider_sees_each_timestep_once(self):
        p = tiny_expert(k_steps=5)
        image, state, _ = tiny_inputs(p)
        seen = []
        n_tokens = p.n_patches + 1 + p.horizon

        def provider(x, t):
            assert x.shape == (p.horizon, p.d_action)
            seen.append(t)
            return [constant(np.zeros((n_tokens, p.d_main))) for _ in p.blocks]

        gated = sample_actions(image, state, p, injections_provider=provider, seed=4)
        assert seen == [5, 4, 3, 2, 1]
        plain = sample_actions(image, state, p, seed=4)
        assert gated.tobytes() == plain.tobytes()
