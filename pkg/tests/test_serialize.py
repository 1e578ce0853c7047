"""Round-trip fidelity of the model container."""

import numpy as np

from asymens.initializers import build_mlp, build_wmlp
from asymens.moe import Combine, GateKind, GateSpec, MixtureModel, build_mixture
from asymens.net import Mode, NetSpec, Network
from asymens.serialize import load_model, save_model


def assert_networks_equal(a: Network, b: Network):
    assert a.spec == b.spec
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.weight, lb.weight)
        assert np.array_equal(la.bias, lb.bias)
        assert np.array_equal(la.mask, lb.mask)
        assert np.array_equal(la.frozen_rows, lb.frozen_rows)
        assert np.array_equal(la.frozen_cols, lb.frozen_cols)
        assert np.array_equal(la.frozen_values, lb.frozen_values)


class TestNetworkRoundTrip:
    def test_mlp(self, tmp_path):
        net = build_mlp(NetSpec(5, 16, 3), rep=1, estimator=2)
        save_model(net, tmp_path / "m.npz")
        assert_networks_equal(net, load_model(tmp_path / "m.npz"))

    def test_wmlp_masks_rebuilt(self, tmp_path):
        net = build_wmlp(NetSpec(5, 16, 3, mode=Mode.WMLP), rep=0, estimator=0)
        save_model(net, tmp_path / "w.npz")
        loaded = load_model(tmp_path / "w.npz")
        assert_networks_equal(net, loaded)
        x = np.random.default_rng(0).normal(size=(4, 5))
        assert np.array_equal(net.predict(x), loaded.predict(x))


class TestMixtureRoundTrip:
    def test_mixture_with_gumbel_gate(self, tmp_path):
        spec = NetSpec(4, 8, 2, mode=Mode.WMLP)
        model = build_mixture(
            spec, 3, rep=2,
            gate_spec=GateSpec(kind=GateKind.GUMBEL_SOFTMAX, temperature=0.5,
                               inference_samples=7, average="gates"),
            combine=Combine.WEIGHT_INTERPOLATION,
        )
        save_model(model, tmp_path / "mix.npz")
        loaded = load_model(tmp_path / "mix.npz")
        assert isinstance(loaded, MixtureModel)
        assert loaded.gate_spec == model.gate_spec
        assert loaded.combine is model.combine
        assert np.array_equal(loaded.gate_weight, model.gate_weight)
        assert np.array_equal(loaded.gate_bias, model.gate_bias)
        for ea, eb in zip(model.experts, loaded.experts):
            assert_networks_equal(ea, eb)

    def test_loaded_mixture_predicts_identically(self, tmp_path):
        model = build_mixture(
            NetSpec(3, 6, 2), 2, rep=0, gate_spec=GateSpec(),
            combine=Combine.OUTPUT_AVERAGE,
        )
        save_model(model, tmp_path / "m.npz")
        loaded = load_model(tmp_path / "m.npz")
        x = np.random.default_rng(1).normal(size=(5, 3))
        assert np.array_equal(model.predict_scores(x), loaded.predict_scores(x))
