"""Coupling-layer and whole-flow contracts: identity initialization,
exact invertibility, and the change-of-variables log-determinant."""

import numpy as np
import pytest

from flowplug.errors import ConfigError, DimensionError
from flowplug.flow import (
    CouplingLayer,
    FlowConfig,
    StyleCode,
    StyleStack,
    build_flow,
    codes_to_latents,
    coupling_forward,
    coupling_inverse,
    latents_to_codes,
    to_latent,
    to_style,
)
from flowplug.numerics import Mlp, parameter
from flowplug.prior import PriorConfig


def small_model(seed=0, num_couplings=4, latent_dim=6, num_codes=3, perturb=0.0):
    prior = PriorConfig(num_attrs=2, latent_dim=latent_dim, sigma=0.5)
    model = build_flow(prior, num_codes, FlowConfig(num_couplings=num_couplings, hidden_width=16), seed)
    if perturb:
        rng = np.random.default_rng(seed + 1)
        for p in model.parameters():
            p.data = p.data + perturb * rng.normal(size=p.data.shape)
    return model


def constant_scale_layer(code_dim=6, log_scale=np.log(2.0), shift=0.0):
    """Nets with zero weights and a constant output bias; a huge clamp makes
    the soft clamp numerically transparent."""
    parity = 0
    n_pass = (code_dim + 1) // 2
    n_trans = code_dim - n_pass
    cond_dim = 2

    def const_net(value):
        return Mlp(
            weights=[parameter(np.zeros((n_pass + cond_dim, n_trans)))],
            biases=[parameter(np.full(n_trans, value))],
        )

    return CouplingLayer(parity, const_net(log_scale), const_net(shift), scale_clamp=1e8, code_dim=code_dim)


class TestCouplingLayer:
    def test_zero_init_is_identity(self):
        model = small_model()
        x = np.random.default_rng(0).normal(size=6)
        y, logdet = coupling_forward(model.layers[0], x, np.array([1.0, 0.0, 0.0]))
        assert np.array_equal(y, x)
        assert logdet == 0.0

    def test_constant_scale_doubles_transformed_half(self):
        layer = constant_scale_layer()
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        y, logdet = coupling_forward(layer, x, np.zeros(2))
        # even coordinates pass through, odd are doubled
        assert np.allclose(y, [1.0, 4.0, 3.0, 8.0, 5.0, 12.0], atol=1e-9)
        assert logdet == pytest.approx(2.0794415416798357, abs=1e-9)

    def test_constant_scale_inverse_halves(self):
        layer = constant_scale_layer()
        y = np.array([1.0, 4.0, 3.0, 8.0, 5.0, 12.0])
        x = coupling_inverse(layer, y, np.zeros(2))
        assert np.allclose(x, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0], atol=1e-9)

    def test_round_trip_random_inputs(self):
        model = small_model(perturb=0.3)
        rng = np.random.default_rng(5)
        layer = model.layers[1]
        for _ in range(1000):
            x = rng.normal(size=6) * 2
            cond = np.eye(3)[rng.integers(0, 3)]
            y, _ = coupling_forward(layer, x, cond)
            back = coupling_inverse(layer, y, cond)
            assert np.abs(back - x).max() <= 1e-9

    def test_dimension_mismatch_rejected(self):
        model = small_model()
        with pytest.raises(DimensionError):
            coupling_forward(model.layers[0], np.zeros(5), np.array([1.0, 0.0, 0.0]))
        with pytest.raises(DimensionError):
            coupling_forward(model.layers[0], np.zeros(6), np.zeros(4))


class TestToLatent:
    def test_identity_at_init_splits_raw_code(self):
        model = small_model()
        w = np.array([0.5, -1.0, 2.0, 0.1, -0.3, 0.9])
        pair, logdet = to_latent(model, StyleCode(w=w, layer_index=1))
        assert np.array_equal(pair.c, w[:2])
        assert np.array_equal(pair.s, w[2:])
        assert logdet == 0.0

    def test_logdet_matches_finite_difference_jacobian(self):
        model = small_model(perturb=0.25)
        rng = np.random.default_rng(2)
        for layer_index in range(3):
            x0 = rng.normal(size=6)
            h = 1e-6
            jac = np.zeros((6, 6))
            for j in range(6):
                e = np.zeros(6)
                e[j] = h
                zp, _ = codes_to_latents(model, (x0 + e)[None, :], np.array([layer_index]))
                zm, _ = codes_to_latents(model, (x0 - e)[None, :], np.array([layer_index]))
                jac[:, j] = (zp[0] - zm[0]) / (2 * h)
            sign, fd_logdet = np.linalg.slogdet(jac)
            _, logdet = codes_to_latents(model, x0[None, :], np.array([layer_index]))
            assert sign == 1.0
            assert abs(logdet[0] - fd_logdet) <= 1e-4

    def test_distinct_conditions_give_distinct_maps_after_training(self):
        from flowplug.losses import LossConfig
        from flowplug.synthetic import SyntheticConfig, generate_dataset
        from flowplug.training import TrainConfig, train

        cfg = SyntheticConfig(
            num_identities=6, frames_per_identity=4, num_attrs=2, code_dim=8, num_codes=2, identity_dim=4
        )
        ds = generate_dataset(cfg, seed=3)
        prior = PriorConfig(num_attrs=2, latent_dim=8, sigma=0.5)
        tc = TrainConfig(
            loss=LossConfig(prior=prior),
            flow=FlowConfig(num_couplings=2, hidden_width=8),
            epochs=2,
            seed=1,
        )
        ckpt, _ = train(ds, tc)
        w = np.random.default_rng(4).normal(size=(10, 8))
        z0, _ = codes_to_latents(ckpt.model, w, np.zeros(10, dtype=int))
        z1, _ = codes_to_latents(ckpt.model, w, np.ones(10, dtype=int))
        assert np.abs(z0 - z1).max() > 1e-6

    def test_layer_index_out_of_range(self):
        model = small_model()
        with pytest.raises(DimensionError):
            to_latent(model, StyleCode(w=np.zeros(6), layer_index=3))


class TestToStyle:
    def test_round_trip_all_layers_many_codes(self):
        for perturb in (0.0, 0.3):
            model = small_model(perturb=perturb)
            rng = np.random.default_rng(8)
            w = rng.normal(size=(1000, 6)) * 3
            for layer_index in range(3):
                idx = np.full(1000, layer_index)
                z, _ = codes_to_latents(model, w, idx)
                back, _ = latents_to_codes(model, z, idx)
                rel = np.abs(back - w).max() / np.abs(w).max()
                assert rel <= 1e-6

    def test_identity_init_concatenates(self):
        from flowplug.prior import LatentPair

        model = small_model()
        pair = LatentPair(c=np.array([1.0, -2.0]), s=np.array([0.1, 0.2, 0.3, 0.4]))
        code = to_style(model, pair, layer_index=0)
        assert np.array_equal(code.w, pair.concat())

    def test_inverse_logdet_negates_forward(self):
        model = small_model(perturb=0.4)
        rng = np.random.default_rng(11)
        w = rng.normal(size=(100, 6))
        idx = rng.integers(0, 3, size=100)
        z, ld = codes_to_latents(model, w, idx)
        _, ld_inv = latents_to_codes(model, z, idx)
        assert np.abs(ld + ld_inv).max() <= 1e-8


class TestInvariants:
    def test_logdet_bounded_by_clamp(self):
        model = small_model(perturb=50.0)  # exaggerated weights saturate the clamp
        rng = np.random.default_rng(12)
        w = rng.normal(size=(200, 6)) * 5
        _, ld = codes_to_latents(model, w, rng.integers(0, 3, size=200))
        bound = 6 * model.flow_config.scale_clamp * len(model.layers)
        assert np.abs(ld).max() <= bound

    def test_mask_alternation_required(self):
        prior = PriorConfig(num_attrs=2, latent_dim=6, sigma=0.5)
        with pytest.raises(ConfigError):
            build_flow(prior, 2, FlowConfig(num_couplings=1), seed=0)

    def test_stack_shape_validation(self):
        with pytest.raises(DimensionError):
            StyleStack(codes=np.zeros(6), labels=np.zeros(2), identity_id=0, frame_id=0)
