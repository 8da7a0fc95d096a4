import numpy as np
import pytest

from poolsel import (
    ArgumentError,
    BlobSpec,
    DataError,
    DivergenceError,
    EmbeddingMatrix,
    LabelVector,
    NormStats,
    ProbeModel,
    TrainSchedule,
    default_batch_size,
    knn_predict,
    linear_eval_schedule,
    make_blob_split,
    max_entropy_schedule,
    probe_predict,
    probe_predict_proba,
    probe_train,
)
from poolsel.classifiers import _loss_and_grads


def identity_stats(d):
    return NormStats(mean=np.zeros(d), std=np.ones(d) - 1e-8)  # std + eps == 1


def finite_difference_grads(w, b, x, y, h=1e-4):
    """Central differences on every parameter, double precision."""

    def loss_at(w_, b_):
        return _loss_and_grads(w_, b_, x, y)[0]

    gw = np.zeros_like(w)
    for i in range(w.shape[0]):
        for j in range(w.shape[1]):
            up, dn = w.copy(), w.copy()
            up[i, j] += h
            dn[i, j] -= h
            gw[i, j] = (loss_at(up, b) - loss_at(dn, b)) / (2 * h)
    gb = np.zeros_like(b)
    for i in range(b.shape[0]):
        up, dn = b.copy(), b.copy()
        up[i] += h
        dn[i] -= h
        gb[i] = (loss_at(w, up) - loss_at(w, dn)) / (2 * h)
    return gw, gb


class TestSchedules:
    def test_lr_drops_at_milestones(self):
        s = TrainSchedule(lr=0.01, milestones=(50, 75), epochs=100)
        assert s.lr_at(0) == 0.01
        assert s.lr_at(49) == 0.01
        assert s.lr_at(50) == pytest.approx(0.001)
        assert s.lr_at(75) == pytest.approx(0.0001)
        assert s.lr_at(99) == pytest.approx(0.0001)

    def test_milestones_validated(self):
        with pytest.raises(ArgumentError):
            TrainSchedule(milestones=(75, 50))
        with pytest.raises(ArgumentError):
            TrainSchedule(milestones=(120,), epochs=100)

    def test_default_batch_sizes(self):
        assert default_batch_size(10) == 4
        assert default_batch_size(500) == 128
        assert linear_eval_schedule(10).lr == 0.01
        assert max_entropy_schedule(10).lr == 0.001


class TestLossAndGradients:
    def test_zero_model_uniform_loss(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(6, 4))
        y = rng.integers(0, 3, size=6)
        loss, _, _ = _loss_and_grads(np.zeros((3, 4)), np.zeros(3), x, y)
        assert loss == pytest.approx(np.log(3), rel=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(42)
        for _ in range(5):
            x = rng.normal(size=(5, 4))
            y = rng.integers(0, 3, size=5)
            w = rng.normal(size=(3, 4))
            b = rng.normal(size=3)
            _, gw, gb = _loss_and_grads(w, b, x, y)
            fw, fb = finite_difference_grads(w, b, x, y)
            assert np.linalg.norm(gw - fw) / max(np.linalg.norm(fw), 1e-12) < 1e-4
            assert np.linalg.norm(gb - fb) / max(np.linalg.norm(fb), 1e-12) < 1e-4


class TestProbeTrain:
    def separable(self, seed=0):
        spec = BlobSpec(
            per_class_counts=(50, 50), dim=8, center_scale=10, sigma=0.5, seed=seed
        )
        return make_blob_split(spec, test_per_class=50)

    def test_learns_separable_blobs(self):
        xtr, ytr, xte, yte = self.separable()
        model = probe_train(xtr, ytr, TrainSchedule(lr=0.01, batch_size=4), seed=0)
        assert model.train_log[-1]["accuracy"] == 1.0
        preds = probe_predict(model, xte)
        assert (preds == yte.labels).mean() >= 0.99

    def test_loss_decreases(self):
        xtr, ytr, _, _ = self.separable(seed=3)
        sched = TrainSchedule(lr=0.01, batch_size=4, epochs=20, milestones=())
        model = probe_train(xtr, ytr, sched, seed=0)
        assert model.train_log[10]["loss"] < model.train_log[0]["loss"]

    def test_deterministic(self):
        xtr, ytr, _, _ = self.separable(seed=5)
        sched = TrainSchedule(lr=0.01, batch_size=16, epochs=5, milestones=())
        a = probe_train(xtr, ytr, sched, seed=1)
        b = probe_train(xtr, ytr, sched, seed=1)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.bias, b.bias)
        assert a.train_log == b.train_log

    def test_divergence_detected(self):
        # An absurd weight decay makes the second batch's loss overflow to
        # inf as soon as the weights leave zero.
        xtr, ytr, _, _ = self.separable()
        sched = TrainSchedule(lr=1.0, batch_size=32, epochs=3, milestones=(), weight_decay=1e308)
        with np.errstate(over="ignore"), pytest.raises(DivergenceError):
            probe_train(xtr, ytr, sched, seed=0)

    def test_single_class_rejected(self):
        m = EmbeddingMatrix([[0.0], [1.0]])
        with pytest.raises(ArgumentError):
            probe_train(m, LabelVector([0, 0]), TrainSchedule(), seed=0)

    def test_length_mismatch(self):
        m = EmbeddingMatrix([[0.0], [1.0]])
        with pytest.raises(ArgumentError):
            probe_train(m, LabelVector([0, 1, 1]), TrainSchedule(), seed=0)

    def test_json_round_trip(self):
        xtr, ytr, _, _ = self.separable()
        sched = TrainSchedule(lr=0.01, batch_size=32, epochs=2, milestones=())
        model = probe_train(xtr, ytr, sched, seed=0)
        clone = ProbeModel.from_json(model.to_json())
        assert np.array_equal(clone.weights, model.weights)
        assert np.array_equal(clone.bias, model.bias)
        assert clone.schedule == model.schedule


class TestPredictProba:
    def test_zero_model_uniform(self):
        model = ProbeModel(
            weights=np.zeros((4, 2)), bias=np.zeros(4), norm_stats=identity_stats(2)
        )
        probs = probe_predict_proba(model, EmbeddingMatrix([[3.0, -1.0]]))
        assert np.allclose(probs, 0.25)

    def test_extreme_logits_do_not_overflow(self):
        model = ProbeModel(
            weights=np.array([[1000.0], [0.0]]), bias=np.zeros(2), norm_stats=identity_stats(1)
        )
        probs = probe_predict_proba(model, EmbeddingMatrix([[1.0]]))
        assert np.isfinite(probs).all()
        assert probs[0, 0] == pytest.approx(1.0)
        assert probs[0, 1] == pytest.approx(0.0, abs=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        model = ProbeModel(
            weights=rng.normal(size=(5, 6)), bias=rng.normal(size=5), norm_stats=identity_stats(6)
        )
        probs = probe_predict_proba(model, EmbeddingMatrix(rng.normal(size=(40, 6)).astype(np.float32)))
        assert np.all(np.abs(probs.sum(axis=1) - 1.0) < 1e-6)

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        w = rng.normal(size=(3, 4))
        b = rng.normal(size=3)
        x = EmbeddingMatrix(rng.normal(size=(10, 4)).astype(np.float32))
        base = probe_predict_proba(ProbeModel(w, b, identity_stats(4)), x)
        shifted = probe_predict_proba(ProbeModel(w, b + 7.5, identity_stats(4)), x)
        assert np.all(np.abs(base - shifted) < 1e-6)

    def test_dimension_mismatch(self):
        model = ProbeModel(np.zeros((2, 3)), np.zeros(2), identity_stats(3))
        with pytest.raises(DataError):
            probe_predict_proba(model, EmbeddingMatrix([[1.0, 2.0]]))


class TestKnn:
    def test_query_equals_training_vector(self):
        train = EmbeddingMatrix([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        labels = LabelVector([0, 1, 2])
        preds = knn_predict(train, labels, train)
        assert preds.tolist() == [0, 1, 2]

    def test_hand_computed_cosines(self):
        # cos((0.9,0.1),(1,0)) = 0.994 beats cos((0.9,0.1),(0,1)) = 0.110.
        train = EmbeddingMatrix([[1.0, 0.0], [0.0, 1.0]])
        labels = LabelVector([0, 1])
        assert knn_predict(train, labels, EmbeddingMatrix([[0.9, 0.1]])).tolist() == [0]

    def test_single_example_pool(self):
        train = EmbeddingMatrix([[2.0, 2.0]])
        labels = LabelVector([0], num_classes=3)
        queries = EmbeddingMatrix([[1.0, 0.0], [-5.0, 3.0], [0.0, 0.0]])
        assert knn_predict(train, labels, queries).tolist() == [0, 0, 0]

    def test_tie_breaks_to_lowest_index(self):
        train = EmbeddingMatrix([[1.0, 0.0], [2.0, 0.0]])  # same direction
        labels = LabelVector([1, 0])
        assert knn_predict(train, labels, EmbeddingMatrix([[3.0, 0.0]])).tolist() == [1]

    def test_blob_accuracy(self):
        spec = BlobSpec(per_class_counts=(30,) * 4, dim=8, center_scale=100, sigma=1.0, seed=0)
        xtr, ytr, xte, yte = make_blob_split(spec, test_per_class=30)
        preds = knn_predict(xtr, ytr, xte)
        assert (preds == yte.labels).mean() >= 0.99

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            knn_predict(
                EmbeddingMatrix([[1.0, 0.0]]),
                LabelVector([0]),
                EmbeddingMatrix([[1.0]]),
            )
