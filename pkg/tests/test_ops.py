"""Neural-net operations against independent oracles.

The convolution oracle is a literal nested-loop evaluation of the dilated
grouped convolution definition; it is the reference for every conv path.
"""

import numpy as np
import pytest

from sfsr.gradcheck import check_gradients
from sfsr.ops import (
    ConvSpec,
    adaptive_avg_pool_to_1x1,
    conv1d_tokens,
    conv2d,
    gelu,
    layer_norm,
    pixel_shuffle,
    relu,
    sigmoid,
    softmax,
    space_to_depth,
)
from sfsr.tensor import ShapeError, Tensor, mul, tsum


from oracles import conv2d_loop_oracle


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


class TestConv2d:
    def test_identity_1x1_kernel(self):
        for shape in [(1, 1, 3, 3), (2, 1, 5, 4), (1, 1, 1, 1)]:
            x = rng(1).random(shape).astype(np.float32)
            w = np.ones((1, 1, 1, 1), np.float32)
            b = np.zeros(1, np.float32)
            y = conv2d(Tensor(x), Tensor(w), Tensor(b), ConvSpec(kernel=(1, 1)))
            assert np.array_equal(y.data, x)

    def test_depthwise_1x1_doubles(self):
        c = 3
        x = rng(2).random((2, c, 4, 4)).astype(np.float32)
        w = np.full((c, 1, 1, 1), 2.0, np.float32)
        b = np.zeros(c, np.float32)
        y = conv2d(Tensor(x), Tensor(w), Tensor(b), ConvSpec(kernel=(1, 1), groups=c))
        assert np.allclose(y.data, 2.0 * x)

    def test_dilated_3x3_matches_loop_oracle(self):
        spec = ConvSpec(kernel=(3, 3), stride=1, dilation=2, padding=(2, 2))
        x = rng(3).standard_normal((1, 1, 8, 8)).astype(np.float32)
        w = rng(4).standard_normal((1, 1, 3, 3)).astype(np.float32)
        b = rng(5).standard_normal(1).astype(np.float32)
        y = conv2d(Tensor(x), Tensor(w), Tensor(b), spec)
        assert y.data.shape == (1, 1, 8, 8)
        ref = conv2d_loop_oracle(x, w, b, spec)
        assert np.allclose(y.data, ref, atol=1e-5)

    @pytest.mark.parametrize(
        "case",
        [
            dict(shape=(2, 4, 9, 9), c_out=4, spec=ConvSpec(kernel=(3, 3), padding=(1, 1))),
            dict(shape=(1, 4, 8, 7), c_out=6, spec=ConvSpec(kernel=(3, 2), stride=2, padding=(1, 0))),
            dict(shape=(2, 4, 9, 9), c_out=8, spec=ConvSpec(kernel=(3, 3), dilation=2, padding=(2, 2), groups=2)),
            dict(shape=(1, 4, 6, 6), c_out=4, spec=ConvSpec(kernel=(1, 1), groups=4)),
            dict(shape=(1, 3, 9, 9), c_out=5, spec=ConvSpec(kernel=(5, 3), padding=(2, 1))),
        ],
    )
    def test_random_cases_match_loop_oracle(self, case):
        spec = case["spec"]
        n, c_in, h, w_in = case["shape"]
        c_out = case["c_out"]
        g = rng(hash(str(case)) % 2**32)
        x = g.standard_normal(case["shape"]).astype(np.float32)
        w = g.standard_normal((c_out, c_in // spec.groups, *spec.kernel)).astype(np.float32)
        b = g.standard_normal(c_out).astype(np.float32)
        y = conv2d(Tensor(x), Tensor(w), Tensor(b), spec)
        ref = conv2d_loop_oracle(x, w, b, spec)
        rel = np.abs(y.data - ref) / np.maximum(np.abs(ref), 1.0)
        assert rel.max() <= 1e-5

    def test_shape_mismatch_rejected(self):
        x = Tensor(np.zeros((1, 3, 4, 4), np.float32))
        w = Tensor(np.zeros((2, 2, 3, 3), np.float32))  # wrong in-channels
        with pytest.raises(ShapeError):
            conv2d(x, w, Tensor(np.zeros(2, np.float32)), ConvSpec(kernel=(3, 3)))

    def test_non_positive_output_rejected(self):
        x = Tensor(np.zeros((1, 1, 2, 2), np.float32))
        w = Tensor(np.zeros((1, 1, 3, 3), np.float32))
        with pytest.raises(ShapeError):
            conv2d(x, w, Tensor(np.zeros(1, np.float32)), ConvSpec(kernel=(3, 3)))

    @pytest.mark.parametrize(
        "spec",
        [
            ConvSpec(kernel=(3, 3), padding=(1, 1)),
            ConvSpec(kernel=(3, 3), dilation=2, padding=(2, 2)),
            ConvSpec(kernel=(2, 2), stride=2),
            ConvSpec(kernel=(1, 1), groups=4),
            ConvSpec(kernel=(3, 3), padding=(1, 1), groups=2),
        ],
    )
    def test_gradients(self, spec):
        g = rng(7)
        c_in, c_out = 4, 4
        x = Tensor(g.standard_normal((2, c_in, 5, 5)), requires_grad=True)
        w = Tensor(g.standard_normal((c_out, c_in // spec.groups, *spec.kernel)) * 0.5, requires_grad=True)
        b = Tensor(g.standard_normal(c_out), requires_grad=True)
        probe = Tensor(g.standard_normal(conv2d(x, w, b, spec).data.shape))
        report = check_gradients(
            lambda: tsum(mul(conv2d(x, w, b, spec), probe)),
            {"x": x, "w": w, "b": b},
            step=1e-6,
            tolerance=5e-6,
        )
        assert report.passed, report.lines()[-1]


class TestConv1dTokens:
    def test_identity_weights(self):
        x = rng(1).random((2, 5, 4)).astype(np.float32)
        w = np.eye(4, dtype=np.float32)
        y = conv1d_tokens(Tensor(x), Tensor(w), Tensor(np.zeros(4, np.float32)))
        assert np.allclose(y.data, x)

    def test_single_position_is_matvec(self):
        g = rng(2)
        x = g.random((1, 1, 6)).astype(np.float32)
        w = g.random((3, 6)).astype(np.float32)
        b = g.random(3).astype(np.float32)
        y = conv1d_tokens(Tensor(x), Tensor(w), Tensor(b))
        assert np.allclose(y.data[0, 0], w @ x[0, 0] + b, atol=1e-6)

    def test_parameter_count_independent_of_length(self):
        c_in, c_out = 6, 9
        w = np.zeros((c_out, c_in), np.float32)
        b = np.zeros(c_out, np.float32)
        assert w.size + b.size == c_in * c_out + c_out

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            conv1d_tokens(
                Tensor(np.zeros((1, 2, 5), np.float32)),
                Tensor(np.zeros((3, 4), np.float32)),
                Tensor(np.zeros(3, np.float32)),
            )


class TestLayerNorm:
    def test_normalizes_last_axis(self):
        x = Tensor(np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
        y = layer_norm(x, Tensor(np.ones(3, np.float32)), Tensor(np.zeros(3, np.float32)))
        assert abs(float(y.data.mean())) < 1e-6
        assert abs(float(y.data.var()) - 1.0) < 1e-3  # biased var with eps

    def test_constant_input_returns_beta(self):
        beta = np.array([0.5, -1.0, 2.0, 0.0], dtype=np.float32)
        x = Tensor(np.full((2, 3, 4), 7.0, dtype=np.float32))
        y = layer_norm(x, Tensor(np.ones(4, np.float32)), Tensor(beta))
        assert np.allclose(y.data, np.broadcast_to(beta, (2, 3, 4)), atol=1e-5)

    def test_gradient_matches_finite_differences(self):
        g = rng(3)
        x = Tensor(g.standard_normal((2, 5, 6)), requires_grad=True)
        gamma = Tensor(g.random(6) + 0.5, requires_grad=True)
        beta = Tensor(g.standard_normal(6), requires_grad=True)
        probe = Tensor(g.standard_normal((2, 5, 6)))
        report = check_gradients(
            lambda: tsum(mul(layer_norm(x, gamma, beta), probe)),
            {"x": x, "gamma": gamma, "beta": beta},
            step=1e-6,
            tolerance=1e-6,
        )
        assert report.passed, report.lines()[-1]

    def test_affine_extent_mismatch(self):
        with pytest.raises(ShapeError):
            layer_norm(Tensor(np.zeros((2, 3), np.float32)), Tensor(np.ones(2, np.float32)), Tensor(np.zeros(3, np.float32)))


class TestActivations:
    def test_pointwise_values(self):
        assert relu(Tensor(np.array([-1.0]))).data[0] == 0.0
        assert relu(Tensor(np.array([2.0]))).data[0] == 2.0
        assert sigmoid(Tensor(np.array([0.0]))).data[0] == 0.5
        assert gelu(Tensor(np.array([0.0]))).data[0] == 0.0

    def test_gelu_exact_form(self):
        from scipy.special import erf

        x = np.linspace(-3, 3, 13)
        expected = 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))
        assert np.allclose(gelu(Tensor(x)).data, expected, atol=1e-12)

    def test_softmax_constant_vector(self):
        y = softmax(Tensor(np.full((5,), 3.3)), axis=-1)
        assert np.allclose(y.data, 0.2)

    def test_softmax_simplex_and_shift_invariance(self):
        g = rng(4)
        x = g.standard_normal((3, 7))
        y = softmax(Tensor(x), axis=-1)
        assert np.allclose(y.data.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all(y.data >= 0)
        y_shift = softmax(Tensor(x + 11.5), axis=-1)
        assert np.allclose(y.data, y_shift.data, atol=1e-6)

    @pytest.mark.parametrize("fn", [relu, sigmoid, gelu, lambda t: softmax(t, axis=-1)])
    def test_gradients(self, fn):
        g = rng(5)
        x = Tensor(g.standard_normal((3, 6)) + 0.1, requires_grad=True)
        probe = Tensor(g.standard_normal((3, 6)))
        report = check_gradients(
            lambda: tsum(mul(fn(x), probe)), {"x": x}, step=1e-6, tolerance=1e-6
        )
        assert report.passed, report.lines()[-1]


class TestPooling:
    def test_constant_plane(self):
        x = Tensor(np.full((1, 2, 3, 3), 0.7, np.float32))
        assert np.allclose(adaptive_avg_pool_to_1x1(x).data, 0.7)

    def test_2x2_mean(self):
        x = Tensor(np.array([1.0, 2.0, 3.0, 4.0], np.float32).reshape(1, 1, 2, 2))
        assert adaptive_avg_pool_to_1x1(x).data[0, 0, 0, 0] == 2.5

    def test_matches_loop_oracle(self):
        x = rng(6).random((2, 3, 5, 4)).astype(np.float32)
        y = adaptive_avg_pool_to_1x1(Tensor(x))
        for n in range(2):
            for c in range(3):
                acc = 0.0
                for i in range(5):
                    for j in range(4):
                        acc += float(x[n, c, i, j])
                assert abs(y.data[n, c, 0, 0] - acc / 20.0) < 1e-6


class TestPixelShuffle:
    def test_r1_identity(self):
        x = rng(7).random((1, 3, 4, 4)).astype(np.float32)
        assert np.array_equal(pixel_shuffle(Tensor(x), 1).data, x)

    def test_definition_case(self):
        x = Tensor(np.array([1.0, 2.0, 3.0, 4.0], np.float32).reshape(1, 4, 1, 1))
        y = pixel_shuffle(x, 2)
        assert np.array_equal(y.data[0, 0], np.array([[1.0, 2.0], [3.0, 4.0]], np.float32))

    def test_permutation_preserves_multiset(self):
        x = rng(8).random((2, 8, 3, 5)).astype(np.float32)
        y = pixel_shuffle(Tensor(x), 2)
        assert y.data.shape == (2, 2, 6, 10)
        assert np.allclose(np.sort(y.data.ravel()), np.sort(x.ravel()))
        assert abs(float(y.data.sum()) - float(x.sum())) < 1e-4

    def test_space_to_depth_inverts(self):
        x = rng(9).random((1, 12, 4, 6)).astype(np.float32)
        y = space_to_depth(pixel_shuffle(Tensor(x), 2), 2)
        assert np.array_equal(y.data, x)

    def test_channel_divisibility(self):
        with pytest.raises(ShapeError):
            pixel_shuffle(Tensor(np.zeros((1, 3, 2, 2), np.float32)), 2)

    def test_gradients(self):
        g = rng(10)
        x = Tensor(g.standard_normal((1, 8, 3, 3)), requires_grad=True)
        probe = Tensor(g.standard_normal((1, 2, 6, 6)))
        report = check_gradients(
            lambda: tsum(mul(pixel_shuffle(x, 2), probe)), {"x": x}, step=1e-6, tolerance=1e-6
        )
        assert report.passed, report.lines()[-1]
