"""Tests for the dense-tensor engine and its gradients."""

import math

import numpy as np
import pytest

from rse import autodiff as ad
from rse import checks
from rse.autodiff import DimensionError, Tape, Tensor, ValidationError, gradcheck
from rse.shuffle import shuffle_permutation


class TestAffine:
    def test_identity_weight(self):
        y = ad.affine(Tensor([1.0, 0.0]), Tensor(np.eye(2)))
        assert np.allclose(y.data, [1.0, 0.0])

    def test_hand_computed(self):
        # [1,2] @ [[1,1],[1,-1]] + [0,1] = [3,0]
        x = Tensor([1.0, 2.0])
        w = Tensor([[1.0, 1.0], [1.0, -1.0]])
        b = Tensor([0.0, 1.0])
        assert np.allclose(ad.affine(x, w, b).data, [3.0, 0.0])

    def test_weight_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((4, 3)))
        w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
        err = gradcheck(lambda w: ad.sum_all(ad.affine(x, w)), [w])
        assert err < 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ad.affine(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
        with pytest.raises(DimensionError):
            ad.affine(Tensor(np.ones(3)), Tensor(np.ones((3, 2))), Tensor(np.ones(3)))

    def test_batched_matches_flat(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 5, 3))
        w = rng.standard_normal((3, 4))
        y = ad.affine(Tensor(x), Tensor(w))
        assert np.allclose(y.data.reshape(-1, 4), x.reshape(-1, 3) @ w, atol=0, rtol=0)


class TestLayerNorm:
    def test_known_row(self):
        # direct mean/variance oracle for [1,2,3,4]
        row = np.array([1.0, 2.0, 3.0, 4.0])
        expected = (row - row.mean()) / np.sqrt(row.var() + 1e-5)
        y = ad.layernorm_nogain(Tensor(row))
        assert np.allclose(y.data, expected)
        assert np.allclose(y.data, [-1.3416, -0.4472, 0.4472, 1.3416], atol=1e-3)

    def test_constant_row_maps_to_zero(self):
        y = ad.layernorm_nogain(Tensor([5.0, 5.0, 5.0, 5.0]))
        assert np.allclose(y.data, 0.0)

    def test_fixed_point(self):
        rng = np.random.default_rng(0)
        row = rng.standard_normal(512)
        row = (row - row.mean()) / row.std()
        y = ad.layernorm_nogain(Tensor(row))
        assert np.max(np.abs(y.data - row)) < 1e-4

    def test_rows_normalized(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((64, 32)) * 3.0 + 1.5
        y = ad.layernorm_nogain(Tensor(x)).data
        assert np.max(np.abs(y.mean(axis=-1))) < 1e-6
        assert np.max(np.abs(y.std(axis=-1) - 1.0)) < 1e-3


class TestElementwise:
    def test_gelu_values(self):
        x = Tensor([0.0, 1.0, -10.0])
        y = ad.gelu(x).data
        assert y[0] == 0.0
        phi1 = 0.5 * (1 + math.erf(1 / math.sqrt(2)))
        assert abs(y[1] - phi1) < 1e-3  # 1 * Phi(1) ~ 0.8413
        assert abs(y[2]) < 1e-6

    def test_sigmoid_values(self):
        assert ad.sigmoid(Tensor([0.0])).data[0] == 0.5
        assert abs(ad.sigmoid(Tensor([math.log(9.0)])).data[0] - 0.9) < 1e-12

    def test_sigmoid_symmetry(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(100) * 8
        s = ad.sigmoid(Tensor(x)).data + ad.sigmoid(Tensor(-x)).data
        assert np.max(np.abs(s - 1.0)) < 1e-12

    def test_sigmoid_extremes_stable(self):
        y = ad.sigmoid(Tensor([-1000.0, 1000.0, np.inf, -np.inf])).data
        assert np.allclose(y, [0.0, 1.0, 1.0, 0.0])


class TestPermute:
    def test_identity(self):
        x = np.random.default_rng(0).standard_normal((8, 3))
        y = ad.permute_seq(Tensor(x), np.arange(8))
        assert np.array_equal(y.data, x)

    def test_two_row_swap(self):
        x = Tensor([[1.0, 1.0], [2.0, 2.0]])
        y = ad.permute_seq(x, np.array([1, 0]))
        assert np.array_equal(y.data, [[2.0, 2.0], [1.0, 1.0]])

    def test_forward_then_inverse_bit_exact(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((16, 4))
        perm = rng.permutation(16)
        y = ad.permute_seq(ad.permute_seq(Tensor(x), perm), np.argsort(perm))
        assert np.array_equal(y.data, x)

    def test_rejects_non_bijection(self):
        with pytest.raises(ValidationError):
            ad.permute_seq(Tensor(np.ones((4, 2))), np.array([0, 0, 1, 2]))
        with pytest.raises(ValidationError):
            ad.permute_seq(Tensor(np.ones((4, 2))), np.array([0, 1, 2, 4]))

    def test_scatter_semantics(self):
        # out[perm[a]] = x[a]
        x = np.arange(8.0).reshape(4, 2)
        perm = np.array([2, 0, 3, 1])
        y = ad.permute_seq(Tensor(x), perm).data
        for a in range(4):
            assert np.array_equal(y[perm[a]], x[a])


class TestConv1d:
    def test_two_stride2_convs_halve_twice(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((4096, 1)))
        k1 = Tensor(rng.standard_normal((4, 1, 2)))
        k2 = Tensor(rng.standard_normal((4, 2, 3)))
        y = ad.conv1d_strided(ad.conv1d_strided(x, k1, 2), k2, 2)
        assert y.shape == (1024, 3)

    def test_width1_identity_kernel(self):
        x = np.random.default_rng(8).standard_normal((10, 1))
        k = Tensor(np.ones((1, 1, 1)))
        y = ad.conv1d_strided(Tensor(x), k, 1)
        assert np.allclose(y.data, x)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.standard_normal((8, 2)), requires_grad=True)
        k = Tensor(rng.standard_normal((3, 2, 2)), requires_grad=True)
        b = Tensor(rng.standard_normal(2), requires_grad=True)
        w = rng.standard_normal((4, 2))
        err = gradcheck(
            lambda x, k, b: ad.sum_all(ad.mul(ad.conv1d_strided(x, k, 2, b), Tensor(w))),
            [x, k, b],
        )
        assert err < 1e-4

    def test_kernel_wider_than_padded_input(self):
        # adaptive same-padding always covers the kernel for n >= 1, so the
        # unsatisfiable case is an empty sequence
        with pytest.raises(DimensionError):
            ad.conv1d_strided(Tensor(np.ones((0, 1))), Tensor(np.ones((8, 1, 1))), 2)

    def test_matches_direct_cross_correlation(self):
        # brute-force oracle with explicit zero padding
        rng = np.random.default_rng(10)
        x = rng.standard_normal((12, 2))
        k = rng.standard_normal((4, 2, 3))
        stride = 2
        out_len = 6
        total = (out_len - 1) * stride + 4 - 12
        pl = total // 2
        xp = np.zeros((12 + total, 2))
        xp[pl : pl + 12] = x
        expected = np.zeros((out_len, 3))
        for t in range(out_len):
            for j in range(4):
                expected[t] += xp[t * stride + j] @ k[j]
        y = ad.conv1d_strided(Tensor(x), Tensor(k), stride)
        assert np.allclose(y.data, expected)


class TestSoftmaxXent:
    def test_uniform_logits(self):
        z = Tensor(np.zeros((3, 4)))
        loss = ad.softmax_xent(z, np.zeros(3, dtype=int), np.ones(3))
        assert abs(float(loss.data) - math.log(4.0)) < 1e-12

    def test_closed_form(self):
        z = Tensor(np.array([[0.0, math.log(3.0)]]))
        loss = ad.softmax_xent(z, np.array([1]), np.ones(1))
        assert abs(float(loss.data) - (-math.log(0.75))) < 1e-12

    def test_masked_positions_zero_gradient(self):
        rng = np.random.default_rng(11)
        z = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        labels = rng.integers(0, 3, 5)
        mask = np.array([1.0, 0.0, 1.0, 0.0, 1.0])
        with Tape() as tape:
            loss = ad.softmax_xent(z, labels, mask)
            tape.backward(loss)
        assert np.all(z.grad[1] == 0.0)
        assert np.all(z.grad[3] == 0.0)
        assert np.any(z.grad[0] != 0.0)

    def test_empty_mask_rejected(self):
        with pytest.raises(ValidationError):
            ad.softmax_xent(Tensor(np.zeros((2, 3))), np.zeros(2, dtype=int), np.zeros(2))

    def test_label_range_validated(self):
        with pytest.raises(ValidationError):
            ad.softmax_xent(Tensor(np.zeros((2, 3))), np.array([0, 3]), np.ones(2))


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
        with Tape() as tape:
            tape.backward(ad.sum_all(x))
        assert np.array_equal(x.grad, np.ones((3, 4)))

    def test_half_square_gives_x(self):
        x = Tensor(np.random.default_rng(1).standard_normal(6), requires_grad=True)
        with Tape() as tape:
            tape.backward(ad.mul(ad.sum_all(ad.mul(x, x)), 0.5))
        assert np.allclose(x.grad, x.data)

    def test_non_scalar_root_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = ad.mul(x, 2.0)
            with pytest.raises(ValidationError):
                tape.backward(y)

    def test_root_must_be_on_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape():
            y = ad.sum_all(x)
        with Tape() as other:
            with pytest.raises(ValidationError):
                other.backward(y)

    def test_tape_records_in_execution_order(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            a = ad.mul(x, 2.0)
            b = ad.add(a, x)
            c = ad.sum_all(b)
        outputs = [out for out, _, _ in tape._entries]
        assert outputs == [a, b, c]

    def test_grad_shapes_match(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        v = Tensor(rng.standard_normal(6), requires_grad=True)
        with Tape() as tape:
            tape.backward(ad.sum_all(ad.mul(x, v)))
        assert x.grad.shape == x.shape
        assert v.grad.shape == v.shape

    def test_no_tape_means_no_recording(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = ad.mul(x, 3.0)
        assert y.requires_grad is False


class TestGradcheck:
    def test_sum_of_squares_tiny_error(self):
        x = Tensor(np.random.default_rng(3).standard_normal(5), requires_grad=True)
        err = gradcheck(lambda x: ad.sum_all(ad.mul(x, x)), [x])
        assert err < 1e-8

    def test_detects_corrupted_gradient(self):
        from rse.autodiff import _record

        def leaky_scale(x):
            out = Tensor(x.data * 2.0)

            def bwd(g):
                return (g * 2.0 * 1.01,)  # deliberately wrong by 1%

            return _record(out, (x,), bwd)

        x = Tensor(np.random.default_rng(4).standard_normal(4), requires_grad=True)
        err = gradcheck(lambda x: ad.sum_all(leaky_scale(x)), [x])
        assert err > 1e-3

    @pytest.mark.parametrize("name", sorted(checks.OP_SUITES))
    def test_all_ops_at_ten_random_points(self, name):
        # whole-model suites are capped at 2 points inside run_suite
        tol = 1e-3 if name == "model" else 1e-4
        assert checks.run_suite(name, points=10, seed=0) < tol


class TestDeterminism:
    def test_forward_bit_identical(self):
        from rse.network import ModelConfig, build_model, rse_forward

        tokens = np.random.default_rng(5).integers(0, 4, size=16)
        outs = []
        for _ in range(2):
            model = build_model(ModelConfig(m=8, blocks=1, n_max=16), seed=7)
            outs.append(rse_forward(model, tokens).data)
        assert np.array_equal(outs[0], outs[1])

    def test_precision_modes(self):
        x32 = Tensor(np.ones(4, dtype=np.float32))
        x64 = Tensor(np.ones(4, dtype=np.float64))
        assert ad.gelu(x32).dtype == np.float32
        assert ad.gelu(x64).dtype == np.float64
