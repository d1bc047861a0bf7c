import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from projectron.models import (ArchitectureConfig, build_mlp, build_projectron, halving_chain,
                               param_count, predict, summary)
from projectron.nn import Dense, Model, RbfPair


def enumerate_params(model):
    """Count parameters from the layer descriptors alone."""
    total = 0
    for desc in model.descriptor()["layers"]:
        if desc["kind"] == "dense":
            total += desc["in"] * desc["out"] + desc["out"]
        elif desc["kind"] == "rbf_pair":
            total += desc["width"] // 2
    return total


class TestBuildProjectron:
    def test_mnist_tiny(self):
        model = build_projectron(480, ArchitectureConfig(4, 3, [], 10))
        kinds = [d["kind"] for d in model.descriptor()["layers"]]
        assert kinds == ["dense", "rbf_pair", "dense", "dense"]
        assert param_count(model) == 480 * 4 + 4 + 2 + 2 * 3 + 3 + 3 * 10 + 10 == 1975
        assert enumerate_params(model) == 1975

    def test_minimal(self):
        model = build_projectron(2, ArchitectureConfig(2, 1, [], 2))
        assert model.forward(np.array([0.3, -0.2])).shape == (2,)

    def test_seed_determinism(self):
        a = build_projectron(20, ArchitectureConfig(6, 4, [], 3), seed=5)
        b = build_projectron(20, ArchitectureConfig(6, 4, [], 3), seed=5)
        c = build_projectron(20, ArchitectureConfig(6, 4, [], 3), seed=6)
        assert a.flat.tobytes() == b.flat.tobytes()
        assert a.flat.tobytes() != c.flat.tobytes()

    def test_initial_gammas(self):
        model = build_projectron(10, ArchitectureConfig(4, 2, [], 2))
        np.testing.assert_array_equal(model.layers[1].gammas, [1.0, 1.0])
        assert not model.layers[0].biases.any()

    @pytest.mark.parametrize("cfg", [ArchitectureConfig(3, 2, [], 2), ArchitectureConfig(0, 2, [], 2),
                                     ArchitectureConfig(4, 0, [], 2), ArchitectureConfig(4, 2, [], 1)])
    def test_invalid(self, cfg):
        with pytest.raises(ValueError):
            build_projectron(8, cfg)

    def test_default_widths(self):
        model = build_projectron(480, ArchitectureConfig())
        assert param_count(model) == enumerate_params(model) == 760842


class TestBuildMlp:
    def test_halving_chain(self):
        assert halving_chain(480, 7) == [240, 120, 60, 30, 15, 7, 3]

    def test_single_hidden(self):
        model = build_mlp(784, [392], 10)
        assert len(model.layers) == 2

    def test_half_width_baseline_counts(self):
        # one hidden layer of half the input width
        assert param_count(build_mlp(784, [392], 10)) == 311_650
        assert param_count(build_mlp(480, [240], 10)) == 117_850

    @given(st.integers(1, 50), st.lists(st.integers(1, 30), min_size=1, max_size=4),
           st.integers(2, 12))
    @settings(max_examples=30, deadline=None)
    def test_count_matches_enumeration(self, n_in, hidden, classes):
        model = build_mlp(n_in, hidden, classes)
        assert param_count(model) == enumerate_params(model)

    def test_empty_hidden(self):
        with pytest.raises(ValueError):
            build_mlp(10, [], 2)


def hand_model(biases):
    layer = Dense(2, len(biases))
    model = Model([layer])
    layer.biases[...] = biases
    return model


class TestForwardPredict:
    def test_zero_weights_uniform(self):
        model = build_projectron(12, ArchitectureConfig(4, 3, [], 5))
        model.flat[...] = 0.0
        np.testing.assert_allclose(model.forward(np.ones(12)), np.full(5, 0.2), rtol=1e-15)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_distribution(self, seed):
        rng = np.random.default_rng(seed)
        model = build_projectron(6, ArchitectureConfig(4, 3, [], 4), seed=seed)
        p = model.forward(rng.normal(scale=10, size=6))
        assert abs(p.sum() - 1.0) <= 1e-12 and np.all(p >= 0)

    def test_closed_form(self):
        p = hand_model([1.0, -1.0]).forward(np.zeros(2))
        e2 = np.exp(2.0)
        np.testing.assert_allclose(p, [e2 / (e2 + 1), 1 / (e2 + 1)])
        assert p[0] == pytest.approx(0.8808, abs=1e-4)

    def test_predict(self):
        assert predict(hand_model(np.log([0.1, 0.7, 0.2])), np.zeros(2)) == 1

    def test_tie_goes_to_lowest(self):
        assert predict(hand_model([0.5, 0.5]), np.zeros(2)) == 0

    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=8), st.floats(0.01, 50))
    def test_argmax_invariance(self, logits, scale):
        logits = np.array(logits)
        assert predict(hand_model(logits), np.zeros(2)) == predict(hand_model(scale * logits),
                                                                   np.zeros(2))

    def test_batch_predict(self):
        model = build_mlp(3, [4], 3, seed=0)
        x = np.random.default_rng(0).normal(size=(7, 3))
        np.testing.assert_array_equal(predict(model, x), [predict(model, row) for row in x])

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            predict(build_mlp(3, [4], 2), np.ones(4))


class TestParamCount:
    def test_dense(self):
        assert param_count(Model([Dense(3, 2)])) == 8

    def test_rbf(self):
        assert param_count(Model([RbfPair(6)], classes=3)) == 3

    def test_summary_lists_total(self):
        text = summary(build_projectron(480, ArchitectureConfig(4, 3, [], 10)))
        assert "1,975" in text and "rbf_pair" in text
