"""Classifier harness: features, gradients, training, metrics, CV, and the
three-arm comparison."""

import numpy as np
import pytest

import ecgfusion as ef
from ecgfusion.classify import FEATURES_PER_LEAD, _init_params, _loss_and_grads, \
    _softmax, featurize, featurize_batch, gradient_check, metrics_from_scores, \
    train_on_features
from ecgfusion.fusion import FusedSample


def _classes(c):
    return [ef.ClassId(i) for i in range(c)]


class TestFeaturize:
    def test_zero_matrix(self):
        feats = featurize(np.zeros((12, 5000)))
        assert feats.shape == (144,)
        assert np.array_equal(feats, np.zeros(144))

    def test_constant_matrix(self):
        c = 1.5
        feats = featurize(np.full((12, 5000), c)).reshape(12, FEATURES_PER_LEAD)
        # block layout: [ll mean/var/energy, lh ..., hl ..., hh ...]
        assert np.abs(feats[:, 0] - 2 * c).max() <= 1e-9   # ll mean
        assert np.abs(feats[:, 1]).max() <= 1e-12          # ll variance
        assert np.abs(feats[:, 2] - 4 * c * c).max() <= 1e-9
        assert np.abs(feats[:, 3:]).max() <= 1e-12         # all detail stats

    def test_lead_permutation_covariance(self, rng):
        x = rng.normal(size=(12, 5000))
        perm = rng.permutation(12)
        direct = featurize(x[perm]).reshape(12, FEATURES_PER_LEAD)
        swapped = featurize(x).reshape(12, FEATURES_PER_LEAD)[perm]
        assert np.array_equal(direct, swapped)

    def test_batch_matches_single(self, rng):
        batch = rng.normal(size=(4, 12, 5000))
        rows = featurize_batch(batch)
        singles = np.stack([featurize(batch[i]) for i in range(4)])
        assert np.array_equal(rows, singles)

    def test_shape_validation(self, rng):
        with pytest.raises(ef.ArgumentError, match="divisible by 4"):
            featurize(rng.normal(size=(12, 5002)))


class TestGradientCheck:
    def test_architecture_matrix(self, rng):
        cases = [((8, 3), "cross_entropy"), ((8, 16, 3), "cross_entropy"),
                 ((12, 8, 5, 4), "cross_entropy"), ((10, 6), "cross_entropy")]
        for widths, loss in cases:
            cfg = ef.NetConfig(widths=widths, loss=loss, seed=ef.RngStream(11))
            x = rng.normal(size=(6, widths[0]))
            y = rng.integers(0, widths[-1], size=6)
            assert gradient_check(cfg, (x, y)) <= 1e-4

    def test_linear_net_squared_loss_tight(self, rng):
        cfg = ef.NetConfig(widths=(6, 4), loss="squared", seed=ef.RngStream(12))
        x = rng.normal(size=(5, 6))
        y = rng.normal(size=(5, 4))
        assert gradient_check(cfg, (x, y)) <= 1e-7

    def test_zero_input_bias_gradient_is_softmax_residual(self):
        cfg = ef.NetConfig(widths=(7, 3), seed=ef.RngStream(13))
        x = np.zeros((4, 7))
        y = np.array([0, 1, 2, 1])
        params = _init_params(cfg)
        _, grads = _loss_and_grads(params, x, y, "cross_entropy")
        logits = np.tile(params[1], (4, 1))
        residual = _softmax(logits)
        residual[np.arange(4), y] -= 1.0
        assert np.abs(grads[1] - residual.mean(axis=0) * 1.0).max() <= 1e-15

    def test_parameter_budget_enforced(self, rng):
        cfg = ef.NetConfig(widths=(200, 200, 10), seed=ef.RngStream(0))
        with pytest.raises(ef.ArgumentError, match="1e4"):
            gradient_check(cfg, (rng.normal(size=(2, 200)), np.array([0, 1])))


class TestTraining:
    def _blobs(self, rng, n=60, dim=4, gap=6.0):
        half = n // 2
        x = np.vstack([rng.normal(size=(half, dim)) - gap / 2,
                       rng.normal(size=(half, dim)) + gap / 2])
        labels = [ef.ClassId(0)] * half + [ef.ClassId(1)] * half
        return x, labels

    def test_separable_problem_learned_quickly(self, rng):
        x, labels = self._blobs(rng)
        cfg = ef.NetConfig(widths=(4, 8, 2), epochs=50, steps_per_epoch=None,
                           seed=ef.RngStream(21))
        model = train_on_features(x, labels, cfg)
        assert max(model.curves.accuracy) >= 0.99

    def test_zero_learning_rate_freezes_weights(self, rng):
        x, labels = self._blobs(rng, n=40)
        cfg = ef.NetConfig(widths=(4, 5, 2), learning_rate=0.0, epochs=4,
                           steps_per_epoch=None, seed=ef.RngStream(22))
        model = train_on_features(x, labels, cfg)
        for got, init in zip(model.params, _init_params(cfg)):
            assert np.array_equal(got, init)
        losses = model.curves.loss
        assert max(losses) - min(losses) <= 1e-9

    def test_same_seed_identical_weights(self, rng):
        x, labels = self._blobs(rng, n=30)
        cfg = ef.NetConfig(widths=(4, 6, 2), epochs=5, seed=ef.RngStream(23))
        a = train_on_features(x, labels, cfg)
        b = train_on_features(x, labels, cfg)
        for pa, pb in zip(a.params, b.params):
            assert np.array_equal(pa, pb)

    def test_divergence_reports_epoch(self, rng):
        x, labels = self._blobs(rng, n=20)
        cfg = ef.NetConfig(widths=(4, 2), loss="squared", learning_rate=1e160,
                           epochs=3, seed=ef.RngStream(24))
        with np.errstate(over="ignore"), pytest.raises(ef.DataError, match="epoch"):
            train_on_features(x, labels, cfg)

    def test_needs_two_classes(self, rng):
        x = rng.normal(size=(20, 4))
        labels = [ef.ClassId(0)] * 20
        cfg = ef.NetConfig(widths=(4, 1), epochs=1, seed=ef.RngStream(0))
        with pytest.raises(ef.InputError, match="2 classes"):
            train_on_features(x, labels, cfg)


class TestMetrics:
    def test_perfect_predictions(self):
        y = np.array([0, 1, 2, 1, 0])
        scores = np.eye(3)[y]
        m = metrics_from_scores(y, scores, _classes(3))
        assert m.accuracy == 1.0
        assert np.array_equal(np.diag(m.confusion), np.array([2, 2, 1]))
        assert all(a == 1.0 for a in m.auc)
        assert m.macro_f1() == 1.0

    def test_random_scores_auc_near_half(self):
        rng = np.random.default_rng(42)
        y = np.array([0] * 500 + [1] * 500)
        scores = rng.uniform(size=(1000, 2))
        scores /= scores.sum(axis=1, keepdims=True)
        m = metrics_from_scores(y, scores, _classes(2))
        assert abs(m.auc[0] - 0.5) <= 0.05
        assert abs(m.auc[1] - 0.5) <= 0.05

    def test_single_class_test_set_has_no_auc(self):
        y = np.zeros(10, dtype=int)
        scores = np.random.default_rng(1).uniform(size=(10, 3))
        m = metrics_from_scores(y, scores, _classes(3))
        assert m.auc == [None, None, None]

    def test_confusion_algebra(self):
        rng = np.random.default_rng(7)
        y = rng.integers(0, 4, size=200)
        scores = rng.uniform(size=(200, 4))
        m = metrics_from_scores(y, scores, _classes(4))
        assert m.confusion.sum() == 200
        for k in range(4):
            assert m.confusion[k].sum() == int((y == k).sum())
        assert m.accuracy == np.trace(m.confusion) / 200
        col = m.confusion.sum(axis=0)
        row = m.confusion.sum(axis=1)
        for k in range(4):
            want_p = m.confusion[k, k] / col[k] if col[k] else 0.0
            want_r = m.confusion[k, k] / row[k] if row[k] else 0.0
            assert m.precision[k] == want_p
            assert m.recall[k] == want_r

    def test_auc_tie_handling(self):
        y = np.array([0, 0, 1, 1])
        scores = np.array([[0.5, 0.5], [0.5, 0.5], [0.5, 0.5], [0.5, 0.5]])
        m = metrics_from_scores(y, scores, _classes(2))
        assert m.auc[0] == 0.5 and m.auc[1] == 0.5

    def test_json_schema(self):
        y = np.array([0, 1])
        scores = np.array([[0.9, 0.1], [0.2, 0.8]])
        payload = metrics_from_scores(y, scores, _classes(2)).to_json()
        assert set(payload) == {"accuracy", "per_class", "confusion", "auc", "macro_f1"}
        assert set(payload["per_class"][0]) == {"name", "precision", "recall",
                                                "ovr_accuracy"}

    def test_one_vs_rest_accuracy(self):
        y = np.array([0, 0, 1, 2])
        scores = np.eye(3)[[0, 1, 1, 2]]
        m = metrics_from_scores(y, scores, _classes(3))
        # class 0: TP=1 TN=2 -> 0.75; class 1: TP=1 TN=2 -> 0.75; class 2: 4/4
        assert np.allclose(m.one_vs_rest_accuracy(), [0.75, 0.75, 1.0])


class TestCrossValidate:
    def _samples(self, rng, per_class=50, dim=6, gap=5.0):
        samples = []
        for k in (0, 1):
            for i in range(per_class):
                vec = rng.normal(size=dim) + (gap if k else -gap)
                samples.append(FusedSample(matrix=vec, label=ef.ClassId(k),
                                           source_id=f"{k}/{i}", library_index=0,
                                           id=f"{k}/{i}"))
        return samples

    @pytest.fixture
    def feature_patch(self, monkeypatch):
        # samples already carry feature vectors; bypass the wavelet summary
        monkeypatch.setattr("ecgfusion.classify.featurize",
                            lambda m, fb=None: np.asarray(m))
        monkeypatch.setattr("ecgfusion.classify.featurize_batch",
                            lambda ms, fb=None: np.asarray(ms))

    def test_fold_sizes_balanced(self, rng, feature_patch):
        samples = self._samples(rng)
        cfg = ef.NetConfig(widths=(6, 4, 2), epochs=3, seed=ef.RngStream(31))
        per_fold, summary = ef.cross_validate(samples, cfg, folds=5)
        assert len(per_fold) == 5
        for m in per_fold:
            assert m.confusion.sum() == 20
        assert summary["folds"] == 5
        assert min(m.accuracy for m in per_fold) <= summary["mean_accuracy"] \
            <= max(m.accuracy for m in per_fold)

    def test_deterministic_assignment(self, rng, feature_patch):
        samples = self._samples(rng, per_class=10)
        cfg = ef.NetConfig(widths=(6, 4, 2), epochs=2, seed=ef.RngStream(32))
        a, _ = ef.cross_validate(samples, cfg, folds=2)
        b, _ = ef.cross_validate(samples, cfg, folds=2)
        for ma, mb in zip(a, b):
            assert np.array_equal(ma.confusion, mb.confusion)

    def test_small_class_error_names_class(self, rng, feature_patch):
        samples = self._samples(rng, per_class=3)
        cfg = ef.NetConfig(widths=(6, 4, 2), epochs=1, seed=ef.RngStream(33))
        with pytest.raises(ef.InputError, match="class0"):
            ef.cross_validate(samples, cfg, folds=5)


class TestCompareAugmentation:
    def test_smoke_and_protocol(self, tmp_path):
        manifest = ef.synthesize_dataset(tmp_path, 3, [6, 16, 16],
                                         length_range=(5000, 5000),
                                         seed=ef.RngStream(1))
        config = ef.FusionConfig(delta=1.0, p=2, seed=ef.RngStream(2))
        net = ef.NetConfig(widths=(144, 16, 3), epochs=6, seed=ef.RngStream(3))
        report = ef.compare_augmentation(manifest, config, net)
        assert set(report["arms"]) == {"imbalanced", "oversampled", "rebalanced"}
        schemas = [set(arm) for arm in report["arms"].values()]
        assert all(s == schemas[0] for s in schemas)
        test_ids = [arm["test_source_ids"] for arm in report["arms"].values()]
        assert test_ids[0] == test_ids[1] == test_ids[2]
        assert report["minority_class"] == "class0"
        imb = report["arms"]["imbalanced"]
        reb = report["arms"]["rebalanced"]
        assert report["minority_recall_delta"] == \
            reb["minority_recall"] - imb["minority_recall"]
        over = report["arms"]["oversampled"]
        # majority pool is 16 - 2 test originals; minority duplicated up to it
        assert over["train_size"] == 3 * 14
