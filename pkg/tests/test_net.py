"""Forward pass, losses, gradients, and interpolation against independent oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymens.checks import max_relative_error, numeric_gradient
from asymens.net import (
    DimensionError,
    IncompatibleModelsError,
    LayerParams,
    Mode,
    NetSpec,
    Network,
    backward,
    cross_entropy_loss,
    forward,
    gelu,
    interpolate_networks,
    interpolate_params,
    mse_loss,
)


def erf_series(x, terms=40):
    """Power-series erf, the oracle for the closed-form GeLU path."""
    total = 0.0
    for n in range(terms):
        total += (-1) ** n * x ** (2 * n + 1) / (math.factorial(n) * (2 * n + 1))
    return 2.0 / math.sqrt(math.pi) * total


def straight_line_forward(layers, x_row):
    """Scalar-loop network evaluation, independent of the vectorized path."""
    a = list(x_row)
    for i, lp in enumerate(layers):
        z = []
        for r in range(lp.weight.shape[0]):
            s = float(lp.bias[r])
            for c in range(lp.weight.shape[1]):
                s += float(lp.weight[r, c]) * a[c]
            z.append(s)
        if i < len(layers) - 1:
            a = [0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))) for v in z]
        else:
            a = z
    return a


def random_net(rng, in_f=3, h=4, out_f=2, frozen_per_row=0):
    spec = NetSpec(in_f, h, out_f, mode=Mode.WMLP if frozen_per_row else Mode.MLP)
    layers = []
    for out_dim, in_dim in spec.layer_dims():
        w = rng.normal(0, 0.5, size=(out_dim, in_dim))
        b = rng.normal(0, 0.5, size=out_dim)
        if frozen_per_row:
            k = min(frozen_per_row, in_dim)
            rows = np.repeat(np.arange(out_dim), k)
            cols = np.concatenate(
                [rng.choice(in_dim, size=k, replace=False) for _ in range(out_dim)]
            )
            vals = rng.normal(size=rows.size)
            layers.append(LayerParams.with_frozen(w, b, rows, cols, vals))
        else:
            layers.append(LayerParams.dense(w, b))
    return Network(spec, layers)


class TestGelu:
    def test_zero(self):
        assert gelu(np.array(0.0)) == 0.0

    def test_one_against_series_oracle(self):
        phi_1 = 0.5 * (1.0 + erf_series(1.0 / math.sqrt(2.0)))
        assert gelu(np.array(1.0)) == pytest.approx(phi_1, abs=1e-12)
        assert gelu(np.array(1.0)) == pytest.approx(0.8413447460685429, abs=1e-12)

    def test_large_negative_vanishes(self):
        assert abs(gelu(np.array(-10.0))) < 1e-20


class TestForward:
    def test_zero_params_zero_output(self):
        spec = NetSpec(3, 5, 2)
        layers = [
            LayerParams.dense(np.zeros((o, i)), np.zeros(o)) for o, i in spec.layer_dims()
        ]
        x = np.random.default_rng(0).normal(size=(6, 3))
        out, _ = forward(layers, x)
        assert np.array_equal(out, np.zeros((6, 2)))

    def test_single_path_zero_input(self):
        spec = NetSpec(1, 1, 1)
        layers = [
            LayerParams.dense(np.ones((o, i)), np.zeros(o)) for o, i in spec.layer_dims()
        ]
        out, _ = forward(layers, np.array([[0.0]]))
        assert out[0, 0] == 0.0

    def test_against_straight_line_oracle(self):
        net = random_net(np.random.default_rng(7), in_f=3, h=4, out_f=2)
        x = np.random.default_rng(8).normal(size=(5, 3))
        out, _ = net.forward(x)
        for r in range(5):
            expected = straight_line_forward(net.layers, x[r])
            assert np.max(np.abs(out[r] - np.array(expected))) < 1e-12

    def test_shape_mismatch(self):
        net = random_net(np.random.default_rng(1))
        with pytest.raises(DimensionError):
            net.forward(np.zeros((4, 7)))


class TestLosses:
    def test_mse_identical(self):
        x = np.arange(6.0).reshape(2, 3)
        loss, grad = mse_loss(x, x)
        assert loss == 0.0
        assert np.array_equal(grad, np.zeros_like(x))

    def test_mse_hand_value(self):
        loss, _ = mse_loss(np.array([[2.0]]), np.array([[0.0]]))
        assert loss == 4.0

    def test_mse_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(3)
        pred = rng.normal(size=(4, 3))
        target = rng.normal(size=(4, 3))
        _, grad = mse_loss(pred, target)
        numeric = numeric_gradient(lambda: mse_loss(pred, target)[0], [pred])
        assert max_relative_error([grad], numeric) < 1e-6

    def test_mse_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mse_loss(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_cross_entropy_uniform(self):
        loss, _ = cross_entropy_loss(np.array([[0.0, 0.0]]), np.array([0]))
        assert loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_cross_entropy_dominant_logit_no_overflow(self):
        loss, _ = cross_entropy_loss(np.array([[1000.0, 0.0]]), np.array([0]))
        assert 0.0 <= loss < 1e-300

    def test_cross_entropy_extreme_logits_finite(self):
        logits = np.array([[1e4, -1e4, 0.0], [-1e4, 1e4, 37.0]])
        loss, grad = cross_entropy_loss(logits, np.array([2, 0]))
        assert math.isfinite(loss)
        assert np.all(np.isfinite(grad))

    def test_cross_entropy_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(4)
        logits = rng.normal(size=(5, 3))
        labels = np.array([0, 2, 1, 1, 0])
        _, grad = cross_entropy_loss(logits, labels)
        numeric = numeric_gradient(lambda: cross_entropy_loss(logits, labels)[0], [logits])
        assert max_relative_error([grad], numeric) < 1e-6

    def test_cross_entropy_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy_loss(np.zeros((1, 2)), np.array([2]))


def analytic_and_numeric(net, x, target, loss_kind):
    def loss_value():
        out, _ = net.forward(x)
        if loss_kind == "mse":
            return mse_loss(out, target)[0]
        return cross_entropy_loss(out, target)[0]

    out, cache = net.forward(x)
    if loss_kind == "mse":
        _, gout = mse_loss(out, target)
    else:
        _, gout = cross_entropy_loss(out, target)
    grads = net.grad_arrays(net.backward(cache, gout))
    # skip masks interleave each layer's weight mask with None for its bias
    skips = []
    for lp in net.layers:
        skips.append(lp.mask if lp.frozen_rows.size else None)
        skips.append(None)
    numeric = numeric_gradient(loss_value, net.param_arrays(), skip_masks=skips)
    return grads, numeric, skips


class TestBackward:
    def test_full_network_vs_finite_differences(self):
        rng = np.random.default_rng(11)
        net = random_net(rng, in_f=3, h=4, out_f=2)
        x = rng.normal(size=(5, 3))
        target = rng.normal(size=(5, 2))
        grads, numeric, skips = analytic_and_numeric(net, x, target, "mse")
        assert max_relative_error(grads, numeric, skips) < 1e-4

    def test_classification_vs_finite_differences(self):
        rng = np.random.default_rng(12)
        net = random_net(rng, in_f=3, h=4, out_f=3)
        x = rng.normal(size=(5, 3))
        labels = np.array([0, 1, 2, 1, 0])
        grads, numeric, skips = analytic_and_numeric(net, x, labels, "xent")
        assert max_relative_error(grads, numeric, skips) < 1e-4

    def test_frozen_positions_get_zero_gradient(self):
        rng = np.random.default_rng(13)
        net = random_net(rng, in_f=4, h=5, out_f=2, frozen_per_row=2)
        x = rng.normal(size=(3, 4))
        out, cache = net.forward(x)
        _, gout = mse_loss(out, np.zeros_like(out))
        grads = net.backward(cache, gout)
        for lp, gw in zip(net.layers, grads.weights):
            assert np.all(gw[lp.frozen_rows, lp.frozen_cols] == 0.0)

    def test_frozen_network_vs_finite_differences(self):
        rng = np.random.default_rng(14)
        net = random_net(rng, in_f=4, h=5, out_f=2, frozen_per_row=2)
        x = rng.normal(size=(4, 4))
        target = rng.normal(size=(4, 2))
        grads, numeric, skips = analytic_and_numeric(net, x, target, "mse")
        assert max_relative_error(grads, numeric, skips) < 1e-4

    def test_zero_upstream_gradient(self):
        rng = np.random.default_rng(15)
        net = random_net(rng)
        x = rng.normal(size=(3, 3))
        _, cache = net.forward(x)
        grads = net.backward(cache, np.zeros((3, 2)))
        for g in grads.weights + grads.biases:
            assert np.all(g == 0.0)

    @given(
        in_f=st.integers(1, 8),
        h=st.integers(1, 8),
        out_f=st.integers(1, 8),
        batch=st.integers(1, 8),
        seed=st.integers(0, 2**31),
    )
    @settings(max_examples=12, deadline=None)
    def test_gradient_check_property(self, in_f, h, out_f, batch, seed):
        rng = np.random.default_rng(seed)
        net = random_net(rng, in_f=in_f, h=h, out_f=out_f)
        x = rng.normal(size=(batch, in_f))
        target = rng.normal(size=(batch, out_f))
        grads, numeric, skips = analytic_and_numeric(net, x, target, "mse")
        assert max_relative_error(grads, numeric, skips) < 1e-4


class TestInterpolateParams:
    def make_sets(self, k, frozen=False, seed=0):
        rng = np.random.default_rng(seed)
        nets = [
            random_net(np.random.default_rng(seed + i), in_f=3, h=4, out_f=2,
                       frozen_per_row=2 if frozen else 0)
            for i in range(k)
        ]
        if frozen:
            # share the frozen layout and values across all sets
            ref = nets[0]
            for net in nets[1:]:
                for lp, lref in zip(net.layers, ref.layers):
                    lp.mask = lref.mask
                    lp.frozen_rows = lref.frozen_rows
                    lp.frozen_cols = lref.frozen_cols
                    lp.frozen_values = lref.frozen_values
                    lp.clamp_frozen()
        return nets

    def test_one_hot_weights_return_exact_copy(self):
        nets = self.make_sets(3)
        for i in range(3):
            alpha = [0.0, 0.0, 0.0]
            alpha[i] = 1.0
            merged = interpolate_params([n.layers for n in nets], alpha)
            for got, want in zip(merged, nets[i].layers):
                assert np.array_equal(got.weight, want.weight)
                assert np.array_equal(got.bias, want.bias)

    def test_identical_sets_half_half_exact(self):
        base = self.make_sets(1)[0]
        merged = interpolate_params([base.layers, [lp.copy() for lp in base.layers]],
                                    [0.5, 0.5])
        for got, want in zip(merged, base.layers):
            assert np.array_equal(got.weight, want.weight)
            assert np.array_equal(got.bias, want.bias)

    def test_identical_sets_general_convex_close(self):
        base = self.make_sets(1)[0]
        copies = [[lp.copy() for lp in base.layers] for _ in range(3)]
        merged = interpolate_params(copies, [0.2, 0.3, 0.5])
        for got, want in zip(merged, base.layers):
            np.testing.assert_allclose(got.weight, want.weight, rtol=0, atol=1e-14)

    def test_frozen_values_preserved_exactly(self):
        nets = self.make_sets(3, frozen=True)
        merged = interpolate_params([n.layers for n in nets], [1 / 3, 1 / 3, 1 / 3])
        for got, ref in zip(merged, nets[0].layers):
            assert np.array_equal(
                got.weight[got.frozen_rows, got.frozen_cols], ref.frozen_values
            )

    def test_mask_mismatch_rejected(self):
        a = self.make_sets(1, frozen=True, seed=1)[0]
        b = self.make_sets(1, frozen=True, seed=2)[0]
        with pytest.raises(IncompatibleModelsError):
            interpolate_params([a.layers, b.layers], [0.5, 0.5])

    def test_shape_mismatch_rejected(self):
        a = random_net(np.random.default_rng(0), in_f=3, h=4, out_f=2)
        b = random_net(np.random.default_rng(0), in_f=3, h=5, out_f=2)
        with pytest.raises(IncompatibleModelsError):
            interpolate_params([a.layers, b.layers], [0.5, 0.5])

    def test_network_wrapper_evaluates(self):
        nets = self.make_sets(2)
        merged = interpolate_networks(nets, [0.5, 0.5])
        x = np.random.default_rng(5).normal(size=(4, 3))
        assert merged.predict(x).shape == (4, 2)
