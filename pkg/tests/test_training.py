import numpy as np
import pytest

from ddar.checkpoint import to_bytes
from ddar.data import Dataset, gen_two_moons
from ddar.exceptions import ContractError, DataError
from ddar.experiments import Scenario
from ddar.autograd import Node
from ddar.model import ExtractorConfig, ForwardTrace, init_model, predict
from ddar.rng import Rng
from ddar.training import (
    AdamState,
    TrainConfig,
    adam_step,
    minibatches,
    smoothed,
    train,
    update_centroids_ema,
    write_history_csv,
)

TINY_EXT = ExtractorConfig(input_dim=2, width=8, depth=2, embed_dim=8)
TINY_CFG = TrainConfig(max_steps=30, num_prototypes=4, centroid_dim=6, batch_size=16)


@pytest.fixture(scope="module")
def moons():
    return gen_two_moons(40, 0.1, seed=3)


class TestTrainConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.learning_rate, c.batch_size, c.num_prototypes, c.sigma, c.loss_weight, c.ema_gamma) == (
            0.01, 64, 64, 0.3, 0.1, 0.999)

    @pytest.mark.parametrize("kw", [dict(learning_rate=0.0), dict(batch_size=0), dict(ema_gamma=1.5),
                                    dict(loss_weight=2.0), dict(sigma=-1.0), dict(max_steps=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ContractError):
            TrainConfig(**kw)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = {"w": np.array([[1.0, -2.0]])}
        adam_step(p, {"w": np.zeros((1, 2))}, AdamState(), lr=0.01)
        np.testing.assert_array_equal(p["w"], [[1.0, -2.0]])

    def test_first_step_is_signed_lr(self):
        g = np.array([[0.3, -5.0, 1e-3]])
        p = {"w": np.zeros((1, 3))}
        adam_step(p, {"w": g}, AdamState(), lr=0.01)
        # bias-corrected m/sqrt(v) = g/|g| up to eps
        expected = -0.01 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(p["w"], expected, rtol=1e-12)

    def test_two_steps_by_hand(self):
        g1, g2 = 0.5, -1.0
        m1, v1 = 0.1 * g1, 0.001 * g1**2
        m2, v2 = 0.9 * m1 + 0.1 * g2, 0.999 * v1 + 0.001 * g2**2
        w1 = -0.1 * (m1 / 0.1) / (np.sqrt(v1 / 0.001) + 1e-8)
        w2 = w1 - 0.1 * (m2 / (1 - 0.9**2)) / (np.sqrt(v2 / (1 - 0.999**2)) + 1e-8)
        p, s = {"w": np.zeros((1, 1))}, AdamState()
        adam_step(p, {"w": np.array([[g1]])}, s, lr=0.1)
        adam_step(p, {"w": np.array([[g2]])}, s, lr=0.1)
        assert p["w"].item() == pytest.approx(w2, rel=1e-13)
        assert s.t == 2

    def test_deterministic(self):
        g = {"w": np.array([[0.2, 0.4]])}
        out = []
        for _ in range(2):
            p = {"w": np.ones((1, 2))}
            adam_step(p, g, AdamState(), lr=0.05)
            out.append(p["w"])
        np.testing.assert_array_equal(*out)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            adam_step({"w": np.zeros((2, 2))}, {"w": np.zeros((1, 2))}, AdamState(), lr=0.1)


def _ema_setup():
    cfg = ExtractorConfig(input_dim=2, width=4, depth=0, embed_dim=4)
    model = init_model(cfg, num_classes=3, num_prototypes=3, centroid_dim=2, rng=Rng(0))
    f = np.array([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0], [0.5, 0.5, 0.5]])
    trace = ForwardTrace(z=None, d_p=None, f_tilde=Node(f), projections=None, kernels=None, leaves={})
    return model, trace, np.array([0, 0, 1])


class TestCentroidEma:
    def test_gamma_one_keeps_centroids(self):
        model, trace, y = _ema_setup()
        model.centroids[:] = 7.0
        update_centroids_ema(model, trace, y, 1.0)
        np.testing.assert_array_equal(model.centroids, 7.0)

    def test_gamma_zero_is_batch_mean(self):
        model, trace, y = _ema_setup()
        update_centroids_ema(model, trace, y, 0.0)
        W0 = model.rbf_weight(0)
        expected = (trace.f_tilde.value[:2] @ W0.T).mean(axis=0)
        np.testing.assert_allclose(model.centroids[0], expected, rtol=1e-14)

    def test_half_from_zero(self):
        model, trace, y = _ema_setup()
        update_centroids_ema(model, trace, y, 0.5)
        v = trace.f_tilde.value[2:3] @ model.rbf_weight(1).T
        np.testing.assert_allclose(model.centroids[1], v[0] / 2, rtol=1e-14)

    def test_absent_class_untouched(self):
        model, trace, y = _ema_setup()
        model.centroids[2] = [4.0, -4.0]
        update_centroids_ema(model, trace, y, 0.3)
        np.testing.assert_array_equal(model.centroids[2], [4.0, -4.0])

    def test_ood_rows_ignored(self):
        model, trace, _ = _ema_setup()
        update_centroids_ema(model, trace, np.array([-1, -1, -1]), 0.0)
        np.testing.assert_array_equal(model.centroids, 0.0)

    def test_gamma_range(self):
        model, trace, y = _ema_setup()
        with pytest.raises(ContractError):
            update_centroids_ema(model, trace, y, 1.1)


class TestMinibatches:
    def test_sizes_and_coverage(self):
        batches = list(minibatches(10, 4, Rng(0), epochs=1))
        assert [len(b) for b in batches] == [4, 4, 2]
        np.testing.assert_array_equal(np.sort(np.concatenate(batches)), np.arange(10))

    def test_same_seed_same_order(self):
        a = list(minibatches(10, 3, Rng(5), epochs=2))
        b = list(minibatches(10, 3, Rng(5), epochs=2))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_epochs_reshuffle(self):
        batches = list(minibatches(20, 20, Rng(1), epochs=2))
        assert not np.array_equal(batches[0], batches[1])

    def test_bad_batch_size(self):
        with pytest.raises(ContractError):
            next(minibatches(5, 0, Rng(0)))


class TestTrain:
    def test_zero_steps_returns_initial_model(self, moons):
        from dataclasses import replace

        model, state = train(moons, TINY_EXT, replace(TINY_CFG, max_steps=0))
        root = Rng(TINY_CFG.seed)
        ref = init_model(TINY_EXT, 2, num_prototypes=4, centroid_dim=6, rng=Rng(root.spawn_seed()))
        assert to_bytes(model) == to_bytes(ref)
        assert state.step == 0 and state.loss_history == []

    def test_deterministic(self, moons):
        a, sa = train(moons, TINY_EXT, TINY_CFG)
        b, sb = train(moons, TINY_EXT, TINY_CFG)
        assert to_bytes(a) == to_bytes(b)
        assert [r.total for r in sa.loss_history] == [r.total for r in sb.loss_history]

    def test_seed_changes_result(self, moons):
        from dataclasses import replace

        a, _ = train(moons, TINY_EXT, TINY_CFG)
        b, _ = train(moons, TINY_EXT, replace(TINY_CFG, seed=1))
        assert to_bytes(a) != to_bytes(b)

    def test_history_and_step_count(self, moons):
        model, state = train(moons, TINY_EXT, TINY_CFG)
        assert state.step == 30 and len(state.loss_history) == 30
        assert state.adam.t == 30
        assert np.any(model.centroids != 0)
        for name, p in model.params.items():
            assert state.adam.m[name].shape == p.shape

    def test_empty_dataset(self):
        with pytest.raises(DataError):
            train(Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int)), TINY_EXT, TINY_CFG)

    def test_missing_class(self):
        with pytest.raises(DataError, match="class 1"):
            train(Dataset(np.zeros((3, 2)), [0, 0, 2]), TINY_EXT, TINY_CFG)

    def test_unlabeled_rows_rejected(self):
        with pytest.raises(DataError):
            train(Dataset(np.zeros((3, 2)), [0, 1, -1]), TINY_EXT, TINY_CFG)

    def test_feature_mismatch(self, moons):
        with pytest.raises(DataError):
            train(moons, ExtractorConfig(input_dim=3, width=4, depth=1, embed_dim=4), TINY_CFG)

    def test_default_run_training_accuracy(self, run_cache):
        result, _ = run_cache.get("ddar", 1)
        tr, _, _ = Scenario().make(1)
        labels, _, _ = predict(result.model, tr.X)
        assert np.mean(labels == tr.y) >= 0.95


class TestHistoryCsv:
    def test_columns(self, moons, tmp_path):
        _, state = train(moons, TINY_EXT, TINY_CFG)
        path = tmp_path / "h.csv"
        write_history_csv(state.loss_history, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,rbf,dissimilar,entropy,total"
        assert len(lines) == 31 and lines[1].startswith("1,")
        assert float(lines[-1].split(",")[4]) == state.loss_history[-1].total


class TestSmoothed:
    def test_trailing_window(self):
        v = np.arange(1.0, 7.0)
        np.testing.assert_allclose(smoothed(v, window=3), [1, 1.5, 2, 3, 4, 5])

    def test_window_one_is_identity(self):
        v = np.random.default_rng(0).normal(size=20)
        np.testing.assert_allclose(smoothed(v, window=1), v)
