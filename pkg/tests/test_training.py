import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import bar_images
from projectron.data import Dataset
from projectron.models import ArchitectureConfig, build_mlp, build_projectron
from projectron.nn import Dense, Model
from projectron.training import (STOP_MAX_EPOCHS, STOP_PATIENCE, EarlyStopping, TrainConfig,
                                 compare_experiment, evaluate, featurize, format_report,
                                 leave_one_out, train)
from projectron.radon import AngleSet


def blobs(n=200, dim=10, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.normal(size=(n, dim))
    x[:, 0] += np.where(y == 1, 4.0, -4.0)
    return Dataset(x, y, 2)


def perceptron_separates(ds, epochs=1000):
    """Classic perceptron; converging to zero mistakes proves linear separability."""
    x = np.hstack([ds.x, np.ones((len(ds), 1))])
    t = np.where(ds.y == 1, 1.0, -1.0)
    w = np.zeros(x.shape[1])
    for _ in range(epochs):
        mistakes = 0
        for xi, ti in zip(x, t):
            if ti * (xi @ w) <= 0:
                w += ti * xi
                mistakes += 1
        if mistakes == 0:
            return True
    return False


def scripted(losses, snapshots=None):
    losses = iter(losses)

    def monitor(model):
        if snapshots is not None:
            snapshots.append(model.flat.copy())
        return next(losses), 0.0

    return monitor


def constant_model(width, classes, winner):
    layer = Dense(width, classes)
    model = Model([layer])
    layer.biases[winner] = 5.0
    return model


class TestEarlyStopping:
    def test_counts_stale_epochs(self):
        stopper = EarlyStopping(patience=3)
        params = np.zeros(2)
        flags = [stopper.update(e, loss, params) for e, loss in
                 enumerate([1.0, 0.5, 0.5, 0.6, 0.5 - 1e-7], start=1)]
        assert flags == [False, False, False, False, True]
        assert stopper.best_epoch == 2

    def test_improvement_resets(self):
        stopper = EarlyStopping(patience=2)
        params = np.zeros(1)
        assert not stopper.update(1, 1.0, params)
        assert not stopper.update(2, 1.0, params)
        assert not stopper.update(3, 0.9, params)
        assert stopper.best_epoch == 3


class TestTrain:
    def test_separable_blobs(self):
        data = blobs()
        assert perceptron_separates(data)
        model = build_projectron(10, ArchitectureConfig(8, 8, [], 2), seed=0)
        cfg = TrainConfig(batch_size=16, max_epochs=49, patience=49, learning_rate=1e-2, seed=0)
        model, history = train(model, data, data, cfg)
        assert any(r.train_acc == 1.0 for r in history.records)
        assert evaluate(model, data) == 1.0

    def test_plateau_stops_after_patience(self):
        data = blobs(40)
        model = build_mlp(10, [4], 2, seed=0)
        snapshots = []
        losses = [1.0, 0.5] + [0.5] * 20
        model, history = train(model, data, None, TrainConfig(patience=3, max_epochs=20),
                               monitor=scripted(losses, snapshots))
        assert len(history.records) == 5
        assert history.best_epoch == 2
        assert history.stop_reason == STOP_PATIENCE
        assert np.array_equal(model.flat, snapshots[1])
        assert not np.array_equal(model.flat, snapshots[-1])

    def test_max_epochs(self):
        data = blobs(40)
        model = build_mlp(10, [4], 2, seed=0)
        model, history = train(model, data, None, TrainConfig(max_epochs=4),
                               monitor=scripted([4.0, 3.0, 2.0, 1.0]))
        assert history.stop_reason == STOP_MAX_EPOCHS
        assert len(history.records) == 4 and history.best_epoch == 4

    @given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=15), st.integers(1, 4))
    @settings(max_examples=30, deadline=None)
    def test_never_overtrains(self, losses, patience):
        data = blobs(20)
        model = build_mlp(10, [3], 2, seed=1)
        snapshots = []
        cfg = TrainConfig(patience=patience, max_epochs=len(losses), batch_size=8)
        model, history = train(model, data, None, cfg, monitor=scripted(losses, snapshots))
        n = len(history.records)
        best = history.best_epoch
        assert n <= best + patience
        assert losses[best - 1] <= min(losses[:n]) + 1e-6
        assert np.array_equal(model.flat, snapshots[best - 1])

    def test_deterministic(self):
        data = blobs(80)
        runs = []
        for _ in range(2):
            model = build_projectron(10, ArchitectureConfig(4, 4, [], 2), seed=3)
            model, history = train(model, data, None, TrainConfig(max_epochs=5, seed=3))
            runs.append((history.records, model.flat.tobytes()))
        assert runs[0] == runs[1]

    def test_each_epoch_sees_every_sample_once(self):
        data = Dataset(np.arange(30.0)[:, None], np.arange(30) % 2, 2)
        model = build_mlp(1, [2], 2, seed=0)
        seen = []
        original = model.loss_and_grads

        def spy(x, y):
            seen.extend(x[:, 0].tolist())
            return original(x, y)

        model.loss_and_grads = spy
        train(model, data, data, TrainConfig(max_epochs=3, patience=5, batch_size=7))
        for epoch in range(3):
            assert sorted(seen[30 * epoch:30 * (epoch + 1)]) == list(range(30))
        assert seen[:30] != seen[30:60]

    def test_history_csv(self, tmp_path):
        data = blobs(40)
        model = build_mlp(10, [4], 2, seed=0)
        _, history = train(model, data, None, TrainConfig(max_epochs=2))
        history.to_csv(tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,train_acc,holdout_loss,holdout_acc"
        assert len(lines) == 3

    def test_errors(self):
        data = blobs(20)
        with pytest.raises(ValueError, match="width"):
            train(build_mlp(3, [2], 2), data, data, TrainConfig())
        with pytest.raises(ValueError, match="empty"):
            train(build_mlp(10, [2], 2), data.take([]), data, TrainConfig())
        with pytest.raises(ValueError, match="empty"):
            train(build_mlp(10, [2], 2), data, data.take([]), TrainConfig())


class TestEvaluate:
    def test_all_correct(self):
        data = Dataset(np.zeros((5, 3)), np.full(5, 2), 3)
        assert evaluate(constant_model(3, 3, 2), data) == 1.0

    def test_half(self):
        data = Dataset(np.zeros((168, 2)), np.arange(168) % 2, 2)
        assert evaluate(constant_model(2, 2, 0), data) == 84 / 168 == 0.5

    def test_constant_predictor_base_rate(self):
        data = Dataset(np.random.default_rng(0).random((100, 4)), np.arange(100) % 10, 10)
        assert evaluate(constant_model(4, 10, 7), data) == pytest.approx(0.1)

    def test_single_item(self):
        data = Dataset(np.zeros((1, 2)), [1], 2)
        assert evaluate(constant_model(2, 2, 0), data) in (0.0, 1.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate(constant_model(2, 2, 0), Dataset(np.zeros((0, 2)), [], 2))


def tiny_mlp(width, classes, seed):
    return build_mlp(width, [4], classes, seed)


LOO_CFG = TrainConfig(max_epochs=40, patience=40, batch_size=4, learning_rate=0.05)


class TestLeaveOneOut:
    def separable(self):
        x = np.array([[-2.0, -2.1], [-2.2, -1.9], [2.0, 2.1], [1.9, 2.2]])
        return Dataset(x, [0, 0, 1, 1], 2)

    def test_separable(self):
        data = self.separable()
        assert perceptron_separates(data)
        assert leave_one_out(data, LOO_CFG, tiny_mlp) == 1.0

    def test_single_class(self):
        data = Dataset(np.random.default_rng(0).normal(size=(5, 2)), np.zeros(5), 2)
        assert leave_one_out(data, LOO_CFG, tiny_mlp) == 1.0

    def test_order_invariant(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(9, 3))
        y = rng.integers(0, 3, size=9)
        data = Dataset(x, y, 3)
        perm = rng.permutation(9)
        cfg = TrainConfig(max_epochs=5, batch_size=4)
        assert leave_one_out(data, cfg, tiny_mlp) == leave_one_out(data.take(perm), cfg, tiny_mlp)

    def test_too_small(self):
        with pytest.raises(ValueError):
            leave_one_out(Dataset(np.zeros((1, 2)), [0], 2), LOO_CFG, tiny_mlp)


class TestCompare:
    def test_report(self):
        tx, ty = bar_images(90, side=12, seed=0)
        vx, vy = bar_images(30, side=12, seed=1)
        train_images = Dataset(tx / 255.0, ty, 3)
        test_images = Dataset(vx / 255.0, vy, 3)
        cfg = TrainConfig(max_epochs=4, batch_size=16)
        arch = ArchitectureConfig(8, 8, [], 3)
        methods = ("mlp-raw", "mlp-radon", "projectron", "mlp-deep")
        rows = compare_experiment(train_images, test_images, cfg, arch, methods=methods,
                                  scale=True)
        assert [r.method for r in rows] == list(methods)
        for r in rows:
            kind = "raw" if r.method == "mlp-raw" else "radon"
            test_set = featurize(test_images, kind, AngleSet(), scale=True)
            assert r.accuracy == evaluate(r.model, test_set)
            assert r.params == r.model.param_count
        deep = rows[3].model.descriptor()["layers"]
        assert [d["out"] for d in deep[:-1]] == [108, 54, 27, 13, 6, 3, 1]
        report = format_report(rows)
        assert "Projectron" in report and "MLP+Raw" in report and "|h|" in report
