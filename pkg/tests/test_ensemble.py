"""Ensemble aggregation rules against brute-force oracles."""

import numpy as np
import pytest

from asymens.data import Task
from asymens.ensemble import (
    DeepEnsemble,
    ensemble_scores,
    interpolated_model,
    predict_ensemble,
    subsets_for_sizes,
)
from asymens.initializers import build_mlp, build_wmlp
from asymens.net import IncompatibleModelsError, LayerParams, Mode, NetSpec, Network


def constant_net(outputs, in_features=2, hidden=3):
    """All-zero weights with output biases set, so every input maps to `outputs`."""
    spec = NetSpec(in_features, hidden, len(outputs))
    layers = [LayerParams.dense(np.zeros((o, i)), np.zeros(o)) for o, i in spec.layer_dims()]
    layers[-1].bias[:] = outputs
    return Network(spec, layers)


def random_pool(k, spec=None, wmlp=False, rep=0):
    spec = spec or NetSpec(3, 6, 2, mode=Mode.WMLP if wmlp else Mode.MLP)
    build = build_wmlp if wmlp else build_mlp
    return [build(spec, rep, est) for est in range(k)]


class TestPredictEnsemble:
    def test_regression_mean_of_two(self):
        ens = DeepEnsemble([constant_net([1.0]), constant_net([3.0])], Task.REGRESSION)
        out = predict_ensemble(ens, np.zeros((4, 2)))
        assert np.array_equal(out, np.full((4, 1), 2.0))

    def test_classification_mean_logits_then_argmax(self):
        ens = DeepEnsemble(
            [constant_net([2.0, 0.0]), constant_net([0.0, 1.0])], Task.CLASSIFICATION
        )
        # mean logits [1, 0.5] -> class 0
        assert np.array_equal(predict_ensemble(ens, np.zeros((3, 2))), [0, 0, 0])

    def test_single_member_identity(self):
        net = random_pool(1)[0]
        ens = DeepEnsemble([net], Task.REGRESSION)
        x = np.random.default_rng(0).normal(size=(5, 3))
        assert np.array_equal(ensemble_scores(ens, x), net.predict(x))

    def test_mean_then_argmax_differs_from_voting(self):
        # votes pick class 1 (two of three members), mean logits [5/3, 4/3] pick class 0
        members = [
            constant_net([5.0, 0.0]),
            constant_net([0.0, 2.0]),
            constant_net([0.0, 2.0]),
        ]
        ens = DeepEnsemble(members, Task.CLASSIFICATION)
        assert np.array_equal(predict_ensemble(ens, np.zeros((1, 2))), [0])

    def test_identical_members_match_single_model(self):
        net = random_pool(1)[0]
        ens = DeepEnsemble([net, net, net, net], Task.CLASSIFICATION)
        x = np.random.default_rng(1).normal(size=(6, 3))
        single = np.argmax(net.predict(x), axis=1)
        assert np.array_equal(predict_ensemble(ens, x), single)

    def test_regression_prediction_within_member_range(self):
        pool = random_pool(5)
        ens = DeepEnsemble(pool, Task.REGRESSION)
        x = np.random.default_rng(2).normal(size=(20, 3))
        preds = np.stack([m.predict(x) for m in pool])
        agg = ensemble_scores(ens, x)
        assert np.all(agg >= preds.min(axis=0) - 1e-12)
        assert np.all(agg <= preds.max(axis=0) + 1e-12)

    def test_brute_force_oracle_random_models(self):
        rng = np.random.default_rng(3)
        for case in range(10):
            k = int(rng.integers(1, 5))
            pool = random_pool(k, rep=case)
            ens = DeepEnsemble(pool, Task.REGRESSION)
            x = rng.normal(size=(4, 3))
            brute = sum(m.predict(x) for m in pool) / k
            assert np.max(np.abs(ensemble_scores(ens, x) - brute)) < 1e-12

    def test_empty_ensemble_rejected(self):
        with pytest.raises(ValueError):
            DeepEnsemble([], Task.REGRESSION)

    def test_mismatched_specs_rejected(self):
        a = build_mlp(NetSpec(3, 6, 2), 0, 0)
        b = build_mlp(NetSpec(3, 8, 2), 0, 0)
        with pytest.raises(IncompatibleModelsError):
            DeepEnsemble([a, b], Task.REGRESSION)


class TestInterpolatedModel:
    def test_copies_of_one_model_average_to_itself(self):
        net = random_pool(1)[0]
        ens = DeepEnsemble([net, Network(net.spec, [lp.copy() for lp in net.layers])],
                           Task.REGRESSION)
        merged = interpolated_model(ens)
        for got, want in zip(merged.param_arrays(), net.param_arrays()):
            assert np.array_equal(got, want)

    def test_three_copies_average_close(self):
        net = random_pool(1)[0]
        copies = [Network(net.spec, [lp.copy() for lp in net.layers]) for _ in range(3)]
        merged = interpolated_model(DeepEnsemble(copies, Task.REGRESSION))
        for got, want in zip(merged.param_arrays(), net.param_arrays()):
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-14)

    def test_brute_force_parameter_average_oracle(self):
        pool = random_pool(2)
        merged = interpolated_model(DeepEnsemble(pool, Task.REGRESSION))
        x = np.random.default_rng(4).normal(size=(5, 3))
        by_hand = [
            LayerParams.dense(
                (a.weight + b.weight) / 2.0, (a.bias + b.bias) / 2.0
            )
            for a, b in zip(pool[0].layers, pool[1].layers)
        ]
        oracle = Network(pool[0].spec, by_hand)
        assert np.max(np.abs(merged.predict(x) - oracle.predict(x))) < 1e-12

    def test_wmlp_average_keeps_frozen_values(self):
        pool = random_pool(4, wmlp=True)
        merged = interpolated_model(DeepEnsemble(pool, Task.REGRESSION))
        for got, ref in zip(merged.layers, pool[0].layers):
            assert np.array_equal(
                got.weight[ref.frozen_rows, ref.frozen_cols], ref.frozen_values
            )


class TestSubsets:
    def test_prefix_rule(self):
        pool = random_pool(4)
        subs = subsets_for_sizes(pool, [2], Task.REGRESSION)
        assert subs[2].members == pool[:2]

    def test_full_pool(self):
        pool = random_pool(4)
        subs = subsets_for_sizes(pool, [4], Task.REGRESSION)
        assert subs[4].members == pool

    def test_nested(self):
        pool = random_pool(8)
        subs = subsets_for_sizes(pool, [2, 4, 8], Task.REGRESSION)
        assert subs[2].members == subs[4].members[:2]
        assert subs[4].members == subs[8].members[:4]

    def test_oversized_request_rejected(self):
        with pytest.raises(ValueError):
            subsets_for_sizes(random_pool(2), [4], Task.REGRESSION)
