"""Tests for model assembly: layers, blocks, frontends, heads, presets."""

import numpy as np
import pytest

from rse import autodiff as ad
from rse.autodiff import Tensor, ValidationError
from rse.network import (
    ModelConfig,
    PRESETS,
    benes_block,
    build_model,
    conv_frontend,
    forward_features,
    identity_override,
    layer_schedule,
    output_head,
    rse_forward,
    switch_layer,
    switch_layer_count,
    switch_layer_stds,
)
from rse.units import AblationFlags, rsu_forward, rsu_init


class TestSwitchLayer:
    def test_n2_reduces_to_single_unit_call(self):
        params = rsu_init(m=3, seed=0)
        x = Tensor(np.random.default_rng(1).standard_normal((2, 3)))
        via_layer = switch_layer(params, x)
        via_unit = rsu_forward(params, ad.reshape(x, (1, 6)))
        assert np.array_equal(via_layer.data.reshape(1, 6), via_unit.data)

    def test_identity_configuration(self):
        params = identity_override(rsu_init(m=4, seed=2))
        x = Tensor(np.random.default_rng(3).standard_normal((8, 4)))
        assert np.array_equal(switch_layer(params, x).data, x.data)

    def test_odd_length_rejected(self):
        params = rsu_init(m=2, seed=4)
        with pytest.raises(ValidationError):
            switch_layer(params, Tensor(np.ones((3, 2))))

    def test_pair_locality(self):
        # permuting elements within one pair changes only that pair's outputs
        params = rsu_init(m=2, seed=5)
        rng = np.random.default_rng(6)
        x = rng.standard_normal((8, 2))
        base = switch_layer(params, Tensor(x)).data
        swapped = x.copy()
        swapped[[2, 3]] = swapped[[3, 2]]  # pair 1 only
        out = switch_layer(params, Tensor(swapped)).data
        assert not np.allclose(out[2:4], base[2:4])
        assert np.array_equal(out[:2], base[:2])
        assert np.array_equal(out[4:], base[4:])

    def test_batched_matches_unbatched(self):
        params = rsu_init(m=3, seed=7)
        rng = np.random.default_rng(8)
        x = rng.standard_normal((2, 8, 3))
        batched = switch_layer(params, Tensor(x)).data
        for b in range(2):
            single = switch_layer(params, Tensor(x[b])).data
            assert np.allclose(batched[b], single, atol=1e-15)


class TestSchedule:
    def test_n8_counts(self):
        # one block at n=8: 2 switch + 2 shuffle per half
        sched = list(layer_schedule(8, blocks=1))
        assert len(sched) == 5  # 2 + 2 + final
        fwd_perms = [p for _, p in sched[:2]]
        rev_perms = [p for _, p in sched[2:4]]
        assert all(p is not None for p in fwd_perms + rev_perms)
        assert sched[4][1] is None
        assert [u for u, _ in sched] == [0, 0, 1, 1, 2]

    @pytest.mark.parametrize("n,blocks", [(8, 1), (16, 1), (64, 2), (256, 3)])
    def test_layer_count_law(self, n, blocks):
        k = int(np.log2(n))
        sched = list(layer_schedule(n, blocks))
        assert len(sched) == blocks * 2 * (k - 1) + 1 == switch_layer_count(n, blocks)

    def test_non_power_of_two_rejected(self):
        with pytest.raises(ValidationError):
            list(layer_schedule(24, 1))


class TestBenesBlock:
    def test_identity_units_give_identity_block(self):
        pair = (identity_override(rsu_init(m=3, seed=9)), identity_override(rsu_init(m=3, seed=10)))
        x = Tensor(np.random.default_rng(11).standard_normal((16, 3)))
        out = benes_block(pair, x)
        assert np.array_equal(out.data, x.data)

    def test_full_model_identity_units(self):
        cfg = ModelConfig(m=3, blocks=2, n_max=32)
        model = build_model(cfg, seed=12, dtype=np.float64)
        for u in model.units:
            identity_override(u)
        x = Tensor(np.random.default_rng(13).standard_normal((32, 3)))
        out = forward_features(model, x)
        assert np.array_equal(out.data, x.data)

    def test_bad_length(self):
        pair = (rsu_init(m=2, seed=14), rsu_init(m=2, seed=15))
        with pytest.raises(ValidationError):
            benes_block(pair, Tensor(np.ones((12, 2))))

    def test_receptive_field_covers_sequence(self):
        # every output position depends on every input position at n=16
        cfg = ModelConfig(m=4, blocks=1, n_max=16)
        model = build_model(cfg, seed=16, dtype=np.float64)
        x = Tensor(np.random.default_rng(17).normal(0, 0.25, (16, 4)), requires_grad=True)
        for j in range(16):
            x.zero_grad()
            with ad.Tape() as tape:
                out = forward_features(model, x)
                probe = ad.sum_all(ad.slice_axis(out, -2, j, j + 1))
                tape.backward(probe)
            row_norms = np.abs(x.grad).sum(axis=-1)
            assert np.all(row_norms > 0.0), f"output {j} misses inputs"


class TestBuildModel:
    def test_algorithmic_switch_unit_subtotal(self):
        model = build_model(PRESETS["algorithmic"](), seed=0)
        assert model.count_breakdown()["switch_units"] == 5 * 590592 == 2952960

    def test_musicnet_shape_total(self):
        model = build_model(PRESETS["musicnet_shape"](), seed=0)
        total = model.parameter_count()
        assert abs(total - 3.06e6) / 3.06e6 < 0.05

    def test_lambada_shape_total(self):
        model = build_model(PRESETS["lambada_shape"](), seed=0)
        total = model.parameter_count()
        assert abs(total - 11e6) / 11e6 < 0.15

    def test_unit_set_count(self):
        for blocks in (1, 2, 3):
            model = build_model(ModelConfig(m=4, blocks=blocks, n_max=8), seed=1)
            assert len(model.units) == 2 * blocks + 1

    def test_deterministic_given_seed(self):
        a = build_model(ModelConfig(m=8, blocks=1, n_max=16), seed=42)
        b = build_model(ModelConfig(m=8, blocks=1, n_max=16), seed=42)
        for (na, ta), (nb, tb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert np.array_equal(ta.data, tb.data)

    def test_parameters_independent_of_length(self):
        # same seed, different maximum length: identical parameter vectors
        short = build_model(ModelConfig(m=8, blocks=2, n_max=64), seed=3)
        long = build_model(ModelConfig(m=8, blocks=2, n_max=4096), seed=3)
        for (na, ta), (nb, tb) in zip(short.named_parameters(), long.named_parameters()):
            assert na == nb
            assert np.array_equal(ta.data, tb.data)

    def test_invalid_config(self):
        with pytest.raises(ValidationError):
            ModelConfig(n_max=24)
        with pytest.raises(ValidationError):
            ModelConfig(blocks=0)
        with pytest.raises(ValidationError):
            ModelConfig(head="nope")


class TestForward:
    def test_pad_input_finite_logits(self):
        cfg = ModelConfig(m=8, blocks=1, n_max=64)
        model = build_model(cfg, seed=4)
        logits = rse_forward(model, np.zeros(64, dtype=np.int64))
        assert np.all(np.isfinite(logits.data))

    def test_weight_sharing_across_lengths(self):
        cfg = ModelConfig(m=8, blocks=1, n_max=64)
        model = build_model(cfg, seed=5)
        for n in (8, 16, 32, 64):
            logits = rse_forward(model, np.zeros(n, dtype=np.int64))
            assert logits.shape == (n, cfg.classes)

    def test_too_long_rejected(self):
        cfg = ModelConfig(m=8, blocks=1, n_max=16)
        model = build_model(cfg, seed=6)
        with pytest.raises(ValidationError):
            rse_forward(model, np.zeros(32, dtype=np.int64))

    def test_no_skip_connections_between_blocks(self):
        # block 1 output constant => model output ignores the input entirely
        cfg = ModelConfig(m=4, blocks=2, n_max=16, flags=AblationFlags(residual="none"))
        model = build_model(cfg, seed=7, dtype=np.float64)
        for unit in model.units[:2]:  # first block's halves
            unit.W.data[:] = 0.0
            unit.B.data[:] = 0.3
        a = rse_forward(model, np.zeros(16, dtype=np.int64))
        b = rse_forward(model, np.full(16, 2, dtype=np.int64))
        assert np.allclose(a.data, b.data, atol=1e-12)

    def test_amplitude_band_small_model(self):
        cfg = ModelConfig(m=32, blocks=2, n_max=64)
        model = build_model(cfg, seed=8, dtype=np.float64)
        stds = switch_layer_stds(model, None, seed=9)
        assert len(stds) == switch_layer_count(64, 2)
        assert all(0.15 <= s <= 0.35 for s in stds)


class TestConvFrontend:
    def test_two_convs_quarter_length(self):
        cfg = ModelConfig(m=16, blocks=1, n_max=4096, vocab=0, classes=8, conv_layers=2)
        model = build_model(cfg, seed=10)
        x = Tensor(np.random.default_rng(11).standard_normal((4096, 1)).astype(np.float32))
        seq = conv_frontend(model, x)
        assert seq.shape == (1024, 16)
        logits = rse_forward(model, x)
        assert logits.shape == (1024, 8)

    def test_divisibility_enforced(self):
        cfg = ModelConfig(m=8, blocks=1, n_max=64, vocab=0, classes=4, conv_layers=2)
        model = build_model(cfg, seed=12)
        with pytest.raises(ValidationError):
            conv_frontend(model, Tensor(np.ones((10, 1))))

    def test_no_convs_is_pure_linear_lift(self):
        cfg = ModelConfig(m=8, blocks=1, n_max=16, vocab=0, classes=4, input_dim=1)
        model = build_model(cfg, seed=13)
        x = np.random.default_rng(14).standard_normal((16, 1)).astype(np.float32)
        seq = ad.affine(Tensor(x), *model.input_proj)
        expected = x @ model.input_proj[0].data + model.input_proj[1].data
        assert np.allclose(seq.data, expected)

    def test_frontend_gradcheck(self):
        from rse.checks import run_suite

        assert run_suite("conv_frontend", points=2, seed=3) < 1e-4

    def test_channel_ramp_default(self):
        cfg = ModelConfig(m=192, blocks=1, n_max=4096, vocab=0, classes=4, conv_layers=2)
        assert cfg.conv_channels == (96, 192)


class TestOutputHead:
    def test_per_symbol_shape(self):
        cfg = ModelConfig(m=8, blocks=1, n_max=4, classes=3)
        model = build_model(cfg, seed=15)
        seq = Tensor(np.random.default_rng(16).standard_normal((4, 8)).astype(np.float32))
        assert output_head(model, seq).shape == (4, 3)

    def test_center_element_index(self):
        cfg = ModelConfig(m=4, blocks=1, n_max=8, classes=5, head="center_element")
        model = build_model(cfg, seed=17, dtype=np.float64)
        seq = np.random.default_rng(18).standard_normal((8, 4))
        logits = output_head(model, Tensor(seq))
        assert logits.shape == (5,)
        expected = seq[4] @ model.head_w.data + model.head_b.data  # 0-based n/2
        assert np.allclose(logits.data, expected)

    def test_position_scalar_softmax_sums_to_one(self):
        cfg = ModelConfig(m=4, blocks=1, n_max=8, classes=1, head="position_scalar")
        model = build_model(cfg, seed=19, dtype=np.float64)
        seq = Tensor(np.random.default_rng(20).standard_normal((8, 4)))
        scores = output_head(model, seq)
        assert scores.shape == (8,)
        p = np.exp(scores.data - scores.data.max())
        assert abs(p.sum() / p.sum() - 1.0) < 1e-12
        assert abs((p / p.sum()).sum() - 1.0) < 1e-12
