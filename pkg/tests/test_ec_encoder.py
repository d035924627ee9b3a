import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trialmatch.ec_encoder import (
    KERNEL_SIZES,
    count_highway_layers,
    ec_output_dim,
    encode_criterion,
    encode_criterion_backward,
    highway_layer,
    init_ec_params,
    multi_kernel_conv,
)
from trialmatch.errors import DimMismatch
from trialmatch.nn import conv1d, conv1d_backward, sigmoid, zeros_like_params

EMBED = 2
CONV = 2
CHANNELS = ec_output_dim(CONV)


def conv_oracle(x, w, b):
    """Direct sliding-window dot products with symmetric zero padding."""
    t_len = x.shape[0]
    c_out, _, k = w.shape
    pad = (k - 1) // 2
    y = np.zeros((t_len, c_out))
    for t in range(t_len):
        for o in range(c_out):
            acc = float(b[o])
            for dt in range(k):
                src = t + dt - pad
                if 0 <= src < t_len:
                    acc += float(x[src] @ w[o, :, dt])
            y[t, o] = acc
    return y


def small_params(seed=0, n_highway=1):
    rng = np.random.default_rng(seed)
    return init_ec_params(rng, EMBED, CONV, n_highway)


def passthrough_highway(params):
    """Force every highway layer to copy its input: gate to 0."""
    for layer in range(1, count_highway_layers(params) + 1):
        params[f"ec.hw{layer}.gate.w"][:] = 0.0
        params[f"ec.hw{layer}.gate.b"][:] = -40.0
    return params


class TestInit:
    def test_shapes(self):
        params = small_params(n_highway=2)
        for j, k in enumerate(KERNEL_SIZES, start=1):
            assert params[f"ec.conv{j}.w"].shape == (CONV, EMBED, k)
            assert params[f"ec.conv{j}.b"].shape == (CONV,)
        assert params["ec.hw2.gate.w"].shape == (CHANNELS, CHANNELS, 3)
        assert params["ec.hw2.tr.w"].shape == params["ec.hw2.gate.w"].shape
        assert count_highway_layers(params) == 2

    def test_needs_one_highway_layer(self):
        with pytest.raises(ValueError, match="highway"):
            small_params(n_highway=0)

    @pytest.mark.parametrize("conv_dim", [1, 16, 128])
    def test_output_dim(self, conv_dim):
        assert ec_output_dim(conv_dim) == 4 * conv_dim


class TestMultiKernelConv:
    def test_zero_input_zero_bias_gives_zero(self):
        params = small_params()
        for j in range(1, 5):
            params[f"ec.conv{j}.b"][:] = 0.0
        x, _ = multi_kernel_conv(params, np.zeros((5, EMBED)))
        assert x.shape == (5, CHANNELS)
        assert np.all(x == 0.0)

    def test_kernel_one_identity_filter_copies_input(self):
        params = small_params()
        for j in range(1, 5):
            params[f"ec.conv{j}.w"][:] = 0.0
            params[f"ec.conv{j}.b"][:] = 0.0
        params["ec.conv1.w"][0, 0, 0] = 1.0
        x, _ = multi_kernel_conv(params, np.array([[3.5, -1.0]]))
        assert x[0, 0] == pytest.approx(3.5)
        assert np.all(x[0, 1:] == 0.0)

    def test_matches_sliding_window_oracle(self):
        rng = np.random.default_rng(7)
        tokens = rng.normal(size=(3, EMBED))
        params = small_params(seed=1)
        x, _ = multi_kernel_conv(params, tokens)
        for j, _k in enumerate(KERNEL_SIZES, start=1):
            want = conv_oracle(
                tokens, params[f"ec.conv{j}.w"], params[f"ec.conv{j}.b"]
            )
            got = x[:, (j - 1) * CONV : j * CONV]
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)

    @pytest.mark.parametrize("t_len", [1, 2, 6, 9])
    def test_time_length_preserved(self, t_len):
        x, _ = multi_kernel_conv(small_params(), np.ones((t_len, EMBED)))
        assert x.shape == (t_len, CHANNELS)

    def test_wrong_token_dim(self):
        with pytest.raises(DimMismatch):
            multi_kernel_conv(small_params(), np.ones((3, EMBED + 1)))

    def test_rejects_1d_input(self):
        with pytest.raises(DimMismatch, match="2-D"):
            multi_kernel_conv(small_params(), np.ones(EMBED))


class TestHighwayLayer:
    def feature_map(self, seed=3, t_len=3):
        rng = np.random.default_rng(seed)
        return rng.normal(size=(t_len, CHANNELS))

    def test_gate_closed_passes_input_through(self):
        params = passthrough_highway(small_params())
        x = self.feature_map()
        v, _ = highway_layer(params, 1, x)
        np.testing.assert_allclose(v, x, rtol=0, atol=1e-12)

    def test_gate_open_applies_transform(self):
        params = small_params()
        params["ec.hw1.gate.w"][:] = 0.0
        params["ec.hw1.gate.b"][:] = 40.0
        x = self.feature_map()
        v, _ = highway_layer(params, 1, x)
        want = conv_oracle(x, params["ec.hw1.tr.w"], params["ec.hw1.tr.b"])
        np.testing.assert_allclose(v, want, rtol=0, atol=1e-12)

    def test_matches_elementwise_oracle(self):
        params = small_params(seed=5)
        x = self.feature_map(seed=6)
        u = sigmoid(conv_oracle(x, params["ec.hw1.gate.w"], params["ec.hw1.gate.b"]))
        c = conv_oracle(x, params["ec.hw1.tr.w"], params["ec.hw1.tr.b"])
        v, _ = highway_layer(params, 1, x)
        np.testing.assert_allclose(v, u * c + (1.0 - u) * x, rtol=0, atol=1e-9)
        assert v.shape == x.shape


class TestEncodeCriterion:
    def test_single_token_pooling_is_identity(self):
        params = small_params()
        tokens = np.random.default_rng(0).normal(size=(1, EMBED))
        out, _ = encode_criterion(params, tokens)
        x, _ = multi_kernel_conv(params, tokens)
        v, _ = highway_layer(params, 1, x)
        np.testing.assert_allclose(out, v[0], rtol=0, atol=1e-12)

    def test_duplicated_sentence_unchanged_on_kernel_one_path(self):
        # restrict to the kernel-1 conv with pass-through highway layers,
        # where the feature map is positionwise and max over a repeated
        # token set cannot change
        params = passthrough_highway(small_params())
        for j in range(2, 5):
            params[f"ec.conv{j}.w"][:] = 0.0
            params[f"ec.conv{j}.b"][:] = 0.0
        tokens = np.random.default_rng(1).normal(size=(4, EMBED))
        out_once, _ = encode_criterion(params, tokens)
        out_twice, _ = encode_criterion(params, np.vstack([tokens, tokens]))
        np.testing.assert_allclose(out_twice, out_once, rtol=0, atol=1e-12)

    def test_token_order_irrelevant_on_kernel_one_path(self):
        params = passthrough_highway(small_params())
        for j in range(2, 5):
            params[f"ec.conv{j}.w"][:] = 0.0
        tokens = np.random.default_rng(2).normal(size=(5, EMBED))
        out, _ = encode_criterion(params, tokens)
        out_shuf, _ = encode_criterion(params, tokens[::-1].copy())
        np.testing.assert_allclose(out_shuf, out, rtol=0, atol=1e-12)

    def test_purity(self):
        params = small_params(seed=9)
        tokens = np.random.default_rng(3).normal(size=(6, EMBED))
        out1, _ = encode_criterion(params, tokens)
        out2, _ = encode_criterion(params, tokens.copy())
        np.testing.assert_array_equal(out1, out2)

    @pytest.mark.parametrize("t_len", [1, 3, 11])
    def test_output_length_independent_of_sentence_length(self, t_len):
        tokens = np.random.default_rng(4).normal(size=(t_len, EMBED))
        out, _ = encode_criterion(small_params(n_highway=3), tokens)
        assert out.shape == (CHANNELS,)

    def test_every_entry_comes_from_some_time_step(self):
        params = small_params(seed=11, n_highway=2)
        tokens = np.random.default_rng(5).normal(size=(7, EMBED))
        out, _ = encode_criterion(params, tokens)
        v, _ = multi_kernel_conv(params, tokens)
        for layer in (1, 2):
            v, _ = highway_layer(params, layer, v)
        for c in range(CHANNELS):
            assert out[c] == v[:, c].max()
            assert out[c] in v[:, c]

    @given(
        tokens=arrays(
            np.float64,
            (4, EMBED),
            elements=st.floats(-3, 3, allow_nan=False),
        )
    )
    @settings(max_examples=25, deadline=None)
    def test_finite_input_finite_output(self, tokens):
        out, _ = encode_criterion(small_params(), tokens)
        assert np.all(np.isfinite(out))
        assert out.shape == (CHANNELS,)


def fd_slope(fn, arr, idx, h=1e-6):
    keep = arr[idx]
    arr[idx] = keep + h
    up = fn()
    arr[idx] = keep - h
    down = fn()
    arr[idx] = keep
    return (up - down) / (2.0 * h)


class TestBackward:
    """Spot finite-difference checks; the training module sweeps every
    tensor of the full model."""

    def setup_method(self):
        self.params = small_params(seed=13, n_highway=2)
        self.tokens = np.random.default_rng(8).normal(size=(3, EMBED))
        self.direction = np.random.default_rng(9).normal(size=CHANNELS)

    def loss(self):
        out, _ = encode_criterion(self.params, self.tokens)
        return float(out @ self.direction)

    def test_parameter_gradients_match_fd(self):
        _, cache = encode_criterion(self.params, self.tokens)
        grads = zeros_like_params(self.params)
        encode_criterion_backward(self.params, cache, self.direction, grads)
        rng = np.random.default_rng(10)
        for name, g in grads.items():
            flat = g.reshape(-1)
            arr = self.params[name].reshape(-1)
            for idx in rng.choice(arr.size, size=min(4, arr.size), replace=False):
                want = fd_slope(self.loss, arr, idx)
                assert flat[idx] == pytest.approx(want, rel=1e-5, abs=1e-8), name

    def test_conv1d_input_gradient_matches_fd(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(4, 3))
        w = rng.normal(size=(2, 3, 3)) * 0.3
        b = rng.normal(size=2) * 0.1
        r = rng.normal(size=(4, 2))

        def loss():
            y, _ = conv1d(x, w, b)
            return float((y * r).sum())

        _, cache = conv1d(x, w, b)
        dx = conv1d_backward(cache, r, np.zeros_like(w), np.zeros_like(b))
        for idx in [(0, 0), (1, 2), (3, 1)]:
            assert dx[idx] == pytest.approx(fd_slope(loss, x, idx), rel=1e-6, abs=1e-9)
