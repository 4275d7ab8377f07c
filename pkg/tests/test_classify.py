"""Tests for the inception-style classifier, fusion and metrics."""

import json

import numpy as np
import pytest

from dopsense import (
    ActivityVector,
    InceptionClassifier,
    InceptionNetwork,
    NetworkSpec,
    classification_metrics,
    fuse,
    gradient_check,
    load_checkpoint,
    rescale_traces,
    save_checkpoint,
)
from dopsense import nn
from dopsense.errors import DataFormatError


SMALL_SPEC = NetworkSpec(
    input_shape=(20, 12),
    branch_maps=(2, 2, 2),
    bottleneck_maps=2,
    mid_maps=2,
    reduce_maps=2,
    dropout_rate=0.2,
    n_classes=3,
)


def stripe_dataset(n_per_class, rows=16, cols=12, noise=0.5, seed=0):
    """Two trivially separable dB-trace classes: energy up top vs down low."""
    rng = np.random.default_rng(seed)
    X = np.full((2 * n_per_class, rows, cols), -12.0)
    y = np.zeros(2 * n_per_class, dtype=np.int64)
    half = rows // 2
    for i in range(2 * n_per_class):
        label = i % 2
        y[i] = label
        band = slice(0, half) if label == 0 else slice(half, rows)
        X[i, band, :] = 0.0
        X[i] += rng.uniform(-noise, 0.0, size=(rows, cols))
    return np.clip(X, -12.0, 0.0), y


class TestRescaleTraces:
    def test_endpoints_and_midpoint(self):
        X = np.array([[0.0, -6.0, -12.0]])
        out = rescale_traces(X)
        np.testing.assert_allclose(out, [[1.0, 0.5, 0.0]], rtol=1e-6)
        assert out.dtype == np.float32

    def test_out_of_band_values_clip(self):
        X = np.array([[3.0, -20.0]])
        np.testing.assert_allclose(rescale_traces(X), [[1.0, 0.0]])

    def test_custom_floor(self):
        np.testing.assert_allclose(
            rescale_traces(np.array([-3.0]), floor_db=-6.0), [0.5], rtol=1e-6
        )

    def test_nonnegative_floor_rejected(self):
        with pytest.raises(ValueError, match="floor_db"):
            rescale_traces(np.zeros(3), floor_db=0.0)


class TestNetworkSpec:
    def test_default_geometry(self):
        spec = NetworkSpec()
        assert spec.half_shape == (170, 50)
        assert spec.concat_maps == 15
        assert spec.flat_features == 3 * 170 * 50

    def test_default_parameter_count(self):
        assert NetworkSpec().parameter_count == 128_097

    def test_parameter_shapes_cover_all_layers(self):
        shapes = NetworkSpec().parameter_shapes()
        assert len(shapes) == 16
        assert shapes["a_proj_w"] == (5, 1, 1, 1)
        assert shapes["b_conv_w"] == (5, 4, 3, 3)
        assert shapes["c_mid_w"] == (4, 4, 3, 3)
        assert shapes["reduce_w"] == (3, 15, 1, 1)
        assert shapes["dense_w"] == (25_500, 5)

    def test_count_matches_shapes(self):
        spec = SMALL_SPEC
        total = sum(int(np.prod(s)) for s in spec.parameter_shapes().values())
        assert spec.parameter_count == total

    def test_json_round_trip(self):
        restored = NetworkSpec.from_json(SMALL_SPEC.to_json())
        assert restored == SMALL_SPEC

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"input_shape": (341, 100)},
            {"input_shape": (2, 100)},
            {"branch_maps": (5, 5)},
            {"branch_maps": (5, 0, 5)},
            {"n_classes": 1},
            {"dropout_rate": 1.0},
            {"dropout_rate": -0.1},
        ],
    )
    def test_invalid_spec_rejected(self, kwargs):
        with pytest.raises(ValueError):
            NetworkSpec(**kwargs)


class TestInceptionNetwork:
    def test_forward_shapes(self):
        net = InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(0))
        x = np.random.default_rng(1).uniform(0, 1, size=(4, 20, 12))
        scores, caches = net.forward(x)
        assert scores.shape == (4, 3)
        red_shape = caches["shapes"][0]
        assert red_shape == (4, SMALL_SPEC.reduce_maps, 10, 6)

    def test_branches_halve_resolution(self):
        net = InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(0))
        x = np.random.default_rng(2).uniform(0, 1, size=(2, 20, 12))
        _, caches = net.forward(x)
        # relu caches hold the pre-activation maps of each branch
        for key in ("a_relu", "b_relu", "c_relu"):
            assert caches[key].shape == (2, 2, 10, 6)

    def test_predict_proba_rows_sum_to_one(self):
        net = InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(0))
        x = np.random.default_rng(3).uniform(0, 1, size=(5, 20, 12))
        probs = net.predict_proba(x)
        assert probs.shape == (5, 3)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=1e-5)

    def test_batching_is_invisible(self):
        net = InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(0))
        x = np.random.default_rng(4).uniform(0, 1, size=(7, 20, 12))
        np.testing.assert_allclose(
            net.predict_proba(x, batch_size=2), net.predict_proba(x, batch_size=64),
            rtol=1e-6,
        )

    def test_inference_is_deterministic(self):
        net = InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(0))
        x = np.random.default_rng(5).uniform(0, 1, size=(3, 20, 12))
        first, _ = net.forward(x, train=False)
        second, _ = net.forward(x, train=False)
        np.testing.assert_array_equal(first, second)

    def test_training_mode_applies_dropout(self):
        net = InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(0))
        x = np.random.default_rng(6).uniform(0, 1, size=(2, 20, 12))
        _, caches = net.forward(x, train=True, rng=np.random.default_rng(7))
        assert caches["dropout"] is not None
        _, caches = net.forward(x, train=False)
        assert caches["dropout"] is None

    def test_all_zero_input_is_finite(self):
        net = InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(0))
        scores, _ = net.forward(np.zeros((1, 20, 12)))
        assert np.all(np.isfinite(scores))

    def test_single_trace_without_batch_axis(self):
        net = InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(0))
        x = np.random.default_rng(8).uniform(0, 1, size=(20, 12))
        batched, _ = net.forward(x[None])
        single, _ = net.forward(x)
        np.testing.assert_array_equal(single, batched)

    def test_wrong_trace_shape_rejected(self):
        net = InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(0))
        with pytest.raises(ValueError, match="trace batch"):
            net.forward(np.zeros((2, 20, 13)))

    def test_seeded_init_reproducible(self):
        a = InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(42))
        b = InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(42))
        for key in a.params:
            np.testing.assert_array_equal(a.params[key], b.params[key])

    def test_astype_leaves_original_untouched(self):
        net = InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(0))
        clone = net.astype(np.float64)
        assert clone.params["dense_w"].dtype == np.float64
        assert net.params["dense_w"].dtype == np.float32
        clone.params["dense_w"][0, 0] = 99.0
        assert net.params["dense_w"][0, 0] != 99.0

    def test_loss_and_grads_covers_every_parameter(self):
        net = InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(0))
        x = np.random.default_rng(9).uniform(0, 1, size=(2, 20, 12))
        loss, grads = net.loss_and_grads(x, np.array([0, 2]), train=False)
        assert np.isfinite(loss)
        assert set(grads) == set(net.params)
        for key, grad in grads.items():
            assert grad.shape == net.params[key].shape


class TestGradientCheck:
    def test_analytic_gradient_passes(self):
        net = InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(0))
        x = np.random.default_rng(1).uniform(0, 1, size=(2, 20, 12))
        worst = gradient_check(net, x, [0, 1], rng=np.random.default_rng(2))
        assert worst < 1e-4

    def test_corrupted_gradient_is_caught(self):
        net = InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(0))
        x = np.random.default_rng(3).uniform(0, 1, size=(2, 20, 12))

        def corrupt(grads):
            grads["b_conv_w"] = grads["b_conv_w"] * 1.1
            return grads

        worst = gradient_check(
            net, x, [0, 1], rng=np.random.default_rng(4), grad_transform=corrupt
        )
        assert worst > 1e-2

    def test_epsilon_bounds_enforced(self):
        net = InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(0))
        x = np.zeros((1, 20, 12))
        with pytest.raises(ValueError, match="epsilon"):
            gradient_check(net, x, [0], epsilon=1e-8)
        with pytest.raises(ValueError, match="epsilon"):
            gradient_check(net, x, [0], epsilon=1e-2)


class TestActivityVector:
    def test_label_is_argmax(self):
        assert ActivityVector(np.array([0.1, 0.7, 0.2])).label == 1

    def test_tie_breaks_to_lowest_index(self):
        assert ActivityVector(np.array([0.4, 0.4, 0.2])).label == 0

    @pytest.mark.parametrize(
        "scores",
        [np.array([1.0]), np.array([[0.5, 0.5]]), np.array([0.7, 0.4]), np.array([-0.1, 1.1])],
    )
    def test_invalid_scores_rejected(self, scores):
        with pytest.raises(ValueError):
            ActivityVector(scores)


class TestFuse:
    def test_three_of_four_agree(self):
        walk = np.array([0.1, 0.8, 0.1, 0.0, 0.0])
        rest = np.array([0.6, 0.2, 0.2, 0.0, 0.0])
        result = fuse([walk, walk, walk, rest])
        assert result.rule == "agreement"
        assert result.label == 1
        assert result.antenna_labels == (1, 1, 1, 0)

    def test_two_two_split_falls_back_to_sum(self):
        v1 = np.array([0.5, 0.4, 0.1, 0.0, 0.0])
        v2 = np.array([0.5, 0.3, 0.2, 0.0, 0.0])
        v3 = np.array([0.1, 0.6, 0.3, 0.0, 0.0])
        v4 = np.array([0.1, 0.6, 0.3, 0.0, 0.0])
        result = fuse([v1, v2, v3, v4])
        assert result.rule == "sum"
        assert result.label == 1
        np.testing.assert_allclose(result.fused_scores, [1.2, 1.9, 0.9, 0.0, 0.0])

    def test_unanimous(self):
        v = np.array([0.2, 0.2, 0.6])
        result = fuse([v, v, v])
        assert result.rule == "agreement"
        assert result.label == 2

    def test_single_antenna_agrees_with_itself(self):
        result = fuse([ActivityVector(np.array([0.3, 0.7]))])
        assert result.rule == "agreement"
        assert result.label == 1

    def test_sum_rule_tie_takes_lowest_index(self):
        result = fuse([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
        assert result.rule == "sum"
        assert result.label == 0

    def test_activity_vectors_accepted(self):
        vectors = [ActivityVector(np.array([0.9, 0.1])) for _ in range(3)]
        assert fuse(vectors).label == 0

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            fuse([])


class TestClassificationMetrics:
    def test_perfect_predictions(self):
        y = np.array([0, 1, 2, 1, 0, 2])
        metrics = classification_metrics(y, y, 3)
        assert metrics["accuracy"] == 1.0
        np.testing.assert_array_equal(metrics["per_class_accuracy"], [1.0, 1.0, 1.0])
        np.testing.assert_array_equal(metrics["f1"], [1.0, 1.0, 1.0])
        np.testing.assert_array_equal(metrics["confusion"], np.eye(3))
        np.testing.assert_array_equal(metrics["support"], [2, 2, 2])

    def test_constant_predictor_on_balanced_labels(self):
        y_true = np.arange(25) % 5
        y_pred = np.zeros(25, dtype=int)
        metrics = classification_metrics(y_true, y_pred, 5)
        assert metrics["accuracy"] == pytest.approx(0.2)
        assert metrics["per_class_accuracy"][0] == 1.0
        np.testing.assert_array_equal(metrics["per_class_accuracy"][1:], 0.0)

    def test_missing_class_warns_and_zeroes_f1(self):
        y_true = np.array([0, 0, 1, 1])
        y_pred = np.array([0, 0, 1, 1])
        with pytest.warns(RuntimeWarning, match="no true samples"):
            metrics = classification_metrics(y_true, y_pred, 3)
        assert metrics["f1"][2] == 0.0
        assert metrics["support"][2] == 0
        np.testing.assert_array_equal(metrics["confusion"][2], 0.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="same length"):
            classification_metrics([0, 1], [0], 2)

    def test_confusion_rows_normalized(self):
        y_true = np.array([0, 0, 0, 0, 1, 1])
        y_pred = np.array([0, 0, 1, 1, 1, 0])
        metrics = classification_metrics(y_true, y_pred, 2)
        np.testing.assert_allclose(metrics["confusion"], [[0.5, 0.5], [0.5, 0.5]])


class TestCheckpoint:
    def make_network(self):
        return InceptionNetwork(SMALL_SPEC, rng=np.random.default_rng(0))

    def test_round_trip(self, tmp_path):
        net = self.make_network()
        path = tmp_path / "model.npz"
        save_checkpoint(path, net, extra={"epochs": 3})
        restored = load_checkpoint(path)
        assert restored.spec == net.spec
        assert restored.extra == {"epochs": 3}
        for key in net.params:
            np.testing.assert_array_equal(restored.params[key], net.params[key])

    def test_restored_network_predicts_identically(self, tmp_path):
        net = self.make_network()
        path = tmp_path / "model.npz"
        save_checkpoint(path, net)
        restored = load_checkpoint(path)
        x = np.random.default_rng(1).uniform(0, 1, size=(3, 20, 12))
        np.testing.assert_array_equal(
            restored.forward(x)[0], net.forward(x)[0]
        )

    def test_meta_missing_rejected(self, tmp_path):
        path = tmp_path / "junk.npz"
        np.savez(path, other=np.zeros(3))
        with pytest.raises(DataFormatError, match="not a model checkpoint"):
            load_checkpoint(path)

    def test_foreign_format_rejected(self, tmp_path):
        path = tmp_path / "foreign.npz"
        np.savez(path, meta=json.dumps({"format": "other-v9", "spec": {}}))
        with pytest.raises(DataFormatError, match="unsupported checkpoint format"):
            load_checkpoint(path)

    def test_unreadable_file_rejected(self, tmp_path):
        path = tmp_path / "broken.npz"
        path.write_bytes(b"this is not a zip archive")
        with pytest.raises(DataFormatError, match="cannot read checkpoint"):
            load_checkpoint(path)

    def test_tensor_set_must_match_spec(self, tmp_path):
        net = self.make_network()
        meta = {"format": "dopsense-model-v1", "spec": json.loads(net.spec.to_json())}
        payload = {f"param:{k}": v for k, v in net.params.items()}
        payload.pop("param:dense_b")
        path = tmp_path / "partial.npz"
        np.savez(path, meta=json.dumps(meta), **payload)
        with pytest.raises(DataFormatError, match="tensors do not match"):
            load_checkpoint(path)


class TestInceptionClassifier:
    def fitted(self, tmp_path=None, **overrides):
        X, y = stripe_dataset(12)
        kwargs = dict(
            n_classes=2,
            branch_maps=(2, 2, 2),
            bottleneck_maps=2,
            mid_maps=2,
            reduce_maps=2,
            learning_rate=3e-3,
            batch_size=8,
            max_epochs=12,
            patience=12,
            seed=0,
        )
        kwargs.update(overrides)
        clf = InceptionClassifier(**kwargs)
        return clf.fit(X, y), X, y

    def test_learns_separable_stripes(self):
        clf, X, y = self.fitted()
        assert np.mean(clf.predict(X) == y) == 1.0

    def test_history_and_parameter_count(self):
        clf, _, _ = self.fitted()
        assert 1 <= len(clf.history_) <= 12
        record = clf.history_[0]
        assert set(record) == {"epoch", "loss", "val_loss", "val_accuracy"}
        assert clf.n_parameters_ == clf.network_.spec.parameter_count
        np.testing.assert_array_equal(clf.classes_, [0, 1])

    def test_explicit_validation_split(self):
        X, y = stripe_dataset(10)
        X_val, y_val = stripe_dataset(4, seed=9)
        clf = InceptionClassifier(
            n_classes=2, branch_maps=(2, 2, 2), bottleneck_maps=2, mid_maps=2,
            reduce_maps=2, learning_rate=3e-3, batch_size=8, max_epochs=8,
            patience=8, seed=0,
        )
        clf.fit(X, y, X_val=X_val, y_val=y_val)
        assert clf.history_[-1]["val_accuracy"] >= 0.9

    def test_training_log_is_jsonl(self, tmp_path):
        log = tmp_path / "train.jsonl"
        clf, _, _ = self.fitted(log_path=str(log), max_epochs=3, patience=3)
        lines = log.read_text().strip().splitlines()
        assert len(lines) == len(clf.history_)
        assert json.loads(lines[0])["epoch"] == 0

    def test_predict_proba_shape(self):
        clf, X, _ = self.fitted()
        probs = clf.predict_proba(X[:5])
        assert probs.shape == (5, 2)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=1e-5)

    def test_unfitted_predict_rejected(self):
        with pytest.raises(RuntimeError, match="fitted"):
            InceptionClassifier().predict(np.zeros((1, 20, 12)))

    def test_wrong_input_rank_rejected(self):
        clf = InceptionClassifier(n_classes=2)
        with pytest.raises(ValueError, match="n_traces"):
            clf.fit(np.zeros((4, 20)), np.zeros(4, dtype=int))

    def test_label_length_mismatch_rejected(self):
        clf = InceptionClassifier(n_classes=2)
        with pytest.raises(ValueError, match="y length"):
            clf.fit(np.zeros((4, 20, 12)), np.zeros(3, dtype=int))

    def test_out_of_range_labels_rejected(self):
        clf = InceptionClassifier(n_classes=2)
        with pytest.raises(ValueError, match="labels must lie in"):
            clf.fit(np.zeros((4, 20, 12)), np.array([0, 1, 2, 0]))

    def test_missing_class_rejected(self):
        clf = InceptionClassifier(n_classes=3)
        with pytest.raises(ValueError, match="classes absent"):
            clf.fit(np.zeros((4, 20, 12)), np.array([0, 1, 0, 1]))

    def test_sklearn_clone_compatible(self):
        from sklearn.base import clone

        clf = InceptionClassifier(n_classes=4, batch_size=16)
        cloned = clone(clf)
        assert cloned.n_classes == 4
        assert cloned.batch_size == 16
