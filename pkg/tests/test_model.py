"""Architecture tests: streams, fusion, training behavior, evaluation metrics."""

import numpy as np
import pytest
from conftest import finite_difference_grads, max_relative_error

from spd_bci.errors import NumericalError
from spd_bci.model import (
    ArchitectureConfig,
    TwoStreamModel,
    cohen_kappa,
    confusion_counts,
    encode_targets,
    evaluate_model,
    kappa_from_agreement,
    pearson_correlation,
    root_mean_squared_error,
    train_model,
)

TINY = dict(
    temporal_input_dim=5,
    spatial_input_dim=6,
    n_outputs=2,
    lstm_layers=3,
    lstm_hidden=8,
    temporal_embedding_dim=8,
    spatial_hidden=16,
    spatial_embedding_dim=8,
    encoder_hidden=4,
    fusion_hidden=16,
    spatial_dropout=0.0,
)


def tiny_model(seed=0, **overrides):
    cfg = ArchitectureConfig(**{**TINY, **overrides})
    return TwoStreamModel(cfg, seed=seed)


def tiny_batch(rng, batch=4, length=3):
    xt = rng.standard_normal((batch, length, TINY["temporal_input_dim"]))
    xs = rng.standard_normal((batch, TINY["spatial_input_dim"]))
    return xt, xs


def zero_params(model):
    for arr in model.params().values():
        arr[:] = 0.0


class TestArchitectureConfig:
    def test_rejects_bad_loss_pairing(self):
        with pytest.raises(ValueError, match="pair"):
            ArchitectureConfig(**{**TINY, "output_activation": "softmax", "loss": "mse"})

    def test_rejects_multiclass_bce(self):
        with pytest.raises(ValueError):
            ArchitectureConfig(
                **{**TINY, "output_activation": "sigmoid", "loss": "bce", "n_outputs": 3}
            )

    def test_rejects_unknown_fusion_mode(self):
        with pytest.raises(ValueError, match="fusion"):
            ArchitectureConfig(**{**TINY, "fusion_mode": "mystery"})

    def test_dropout_rates_must_cover_layers(self):
        with pytest.raises(ValueError, match="dropout"):
            ArchitectureConfig(
                **{**TINY, "temporal_regularizer": "dropout", "temporal_dropout": (0.2,)}
            )


class TestTemporalStream:
    def test_zero_network_gives_zero_embedding(self):
        model = tiny_model()
        zero_params(model)
        xt, _ = tiny_batch(np.random.default_rng(0))
        embed = model.temporal_embedding(xt, train=False)
        np.testing.assert_array_equal(embed, 0.0)

    @pytest.mark.parametrize("length", [7, 15])
    def test_embedding_dimension_independent_of_window_count(self, length):
        model = tiny_model()
        xt = np.random.default_rng(1).standard_normal((3, length, TINY["temporal_input_dim"]))
        assert model.temporal_embedding(xt, train=False).shape == (3, 8)


class TestSpatialStream:
    def test_zero_network_gives_zero_embedding(self):
        model = tiny_model()
        zero_params(model)
        _, xs = tiny_batch(np.random.default_rng(2))
        np.testing.assert_array_equal(model.spatial_embedding(xs, train=False), 0.0)

    def test_dataset_scale_dimensions(self):
        cfg = ArchitectureConfig(
            temporal_input_dim=620,
            spatial_input_dim=5880,
            n_outputs=3,
            lstm_hidden=16,  # keep the test light; the spatial path is the point
        )
        model = TwoStreamModel(cfg, seed=0)
        xs = np.random.default_rng(3).standard_normal((2, 5880))
        assert model.spatial_embedding(xs, train=False).shape == (2, 64)
        assert model.spatial_fc1.params["w"].shape == (512, 5880)


class TestFusion:
    def test_equal_scores_give_half_weights_and_three_halves_scale(self):
        model = tiny_model()
        for dense in (*model.encoder_t, *model.encoder_s):
            dense.params["w"][:] = 0.0
            dense.params["b"][:] = 0.0
        xt, xs = tiny_batch(np.random.default_rng(4))
        model.forward(xt, xs, train=False)
        np.testing.assert_allclose(model.fusion_weights, 0.5, atol=1e-12)

    def test_extreme_score_saturates_scales(self):
        model = tiny_model()
        for dense in (*model.encoder_t, *model.encoder_s):
            dense.params["w"][:] = 0.0
            dense.params["b"][:] = 0.0
        model.encoder_t[1].params["b"][:] = 50.0
        model.encoder_s[1].params["b"][:] = -50.0
        xt, xs = tiny_batch(np.random.default_rng(5))
        model.forward(xt, xs, train=False)
        alpha = model.fusion_weights
        np.testing.assert_allclose(alpha[:, 0], 1.0, atol=1e-12)
        np.testing.assert_allclose(alpha[:, 1], 0.0, atol=1e-12)

    def test_weights_sum_to_one(self):
        model = tiny_model(seed=3)
        xt, xs = tiny_batch(np.random.default_rng(6))
        model.forward(xt, xs, train=False)
        alpha = model.fusion_weights
        assert np.all(alpha > 0.0) and np.all(alpha < 1.0)
        np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-12)

    def test_weighted_scales_stay_in_one_to_two(self):
        model = tiny_model(seed=7)
        xt, xs = tiny_batch(np.random.default_rng(7))
        model.forward(xt, xs, train=False)
        scale = 1.0 + model.fusion_weights
        assert np.all(scale > 1.0) and np.all(scale < 2.0)

    def test_concatenation_mode_reduces_to_plain_head(self):
        model = tiny_model(fusion_mode="concatenation")
        xt, xs = tiny_batch(np.random.default_rng(8))
        logits = model.forward(xt, xs, train=False)
        e_t = model.temporal_embedding(xt, train=False)
        e_s = model.spatial_embedding(xs, train=False)
        manual = model.head.forward(
            model.fusion_fc.forward(np.concatenate([e_t, e_s], axis=1), train=False),
            train=False,
        )
        np.testing.assert_allclose(logits, manual, atol=1e-12)

    def test_independent_sigmoid_mode_scales_between_one_and_two(self):
        model = tiny_model(fusion_mode="independent-sigmoid", seed=9)
        xt, xs = tiny_batch(np.random.default_rng(9))
        model.forward(xt, xs, train=False)
        alpha = model.fusion_weights
        assert np.all(alpha > 0.0) and np.all(alpha < 1.0)

    def test_shifting_both_scores_leaves_weights_scaling_changes_them(self):
        model = tiny_model(seed=10)
        xt, xs = tiny_batch(np.random.default_rng(10))
        model.forward(xt, xs, train=False)
        baseline = model.fusion_weights.copy()
        # Same constant added to both scalar scores: softmax unchanged.
        model.encoder_t[1].params["b"] += 7.5
        model.encoder_s[1].params["b"] += 7.5
        model.forward(xt, xs, train=False)
        np.testing.assert_allclose(model.fusion_weights, baseline, atol=1e-12)
        # Scaling both scores changes the weights (softmax is not scale invariant).
        model.encoder_t[1].params["w"] *= 3.0
        model.encoder_t[1].params["b"] = (model.encoder_t[1].params["b"] - 7.5) * 3.0
        model.encoder_s[1].params["w"] *= 3.0
        model.encoder_s[1].params["b"] = (model.encoder_s[1].params["b"] - 7.5) * 3.0
        model.forward(xt, xs, train=False)
        assert not np.allclose(model.fusion_weights, baseline, atol=1e-6)


class TestEndToEndGradients:
    @pytest.mark.parametrize("fusion_mode", ["weighted", "soft-attention", "concatenation", "independent-sigmoid"])
    def test_fused_model_matches_finite_differences(self, fusion_mode):
        rng = np.random.default_rng(20)
        model = tiny_model(seed=5, fusion_mode=fusion_mode)
        xt, xs = tiny_batch(rng)
        targets = encode_targets(np.array([0, 1, 1, 0]), model.config)

        def loss():
            logits = model.forward(xt, xs, train=True)
            return model.loss_and_grad(logits, targets)[0]

        model.zero_grads()
        logits = model.forward(xt, xs, train=True)
        _, dlogits = model.loss_and_grad(logits, targets)
        model.backward(dlogits)
        analytic = {k: v.copy() for k, v in model.grads().items()}
        numeric = finite_difference_grads(loss, model.params())
        for key, grad in analytic.items():
            err = max_relative_error(grad, numeric[key])
            assert err < 1e-4, f"{fusion_mode}: tensor {key} rel err {err:.2e}"

    @pytest.mark.parametrize("variant", ["temporal", "spatial"])
    def test_single_stream_variants_match_finite_differences(self, variant):
        rng = np.random.default_rng(21)
        model = tiny_model(seed=6, variant=variant)
        xt, xs = tiny_batch(rng)
        targets = encode_targets(np.array([1, 0, 1, 0]), model.config)

        def loss():
            logits = model.forward(xt, xs, train=True)
            return model.loss_and_grad(logits, targets)[0]

        model.zero_grads()
        logits = model.forward(xt, xs, train=True)
        _, dlogits = model.loss_and_grad(logits, targets)
        model.backward(dlogits)
        analytic = {k: v.copy() for k, v in model.grads().items()}
        numeric = finite_difference_grads(loss, model.params())
        for key, grad in analytic.items():
            err = max_relative_error(grad, numeric[key])
            assert err < 1e-4, f"{variant}: tensor {key} rel err {err:.2e}"


def separable_dataset(rng, n=64):
    """Binary task where both streams carry a strong linear cue."""
    labels = rng.integers(0, 2, size=n)
    shift = (2.0 * labels - 1.0)[:, None]
    xt = 0.3 * rng.standard_normal((n, 3, TINY["temporal_input_dim"]))
    xt[:, :, 0] += shift
    xs = 0.3 * rng.standard_normal((n, TINY["spatial_input_dim"]))
    xs[:, 0] += shift[:, 0]
    return xt, xs, labels


class TestTraining:
    def test_separable_task_reaches_high_accuracy(self):
        rng = np.random.default_rng(30)
        xt, xs, labels = separable_dataset(rng, n=64)
        model = tiny_model(seed=1)
        train_model(model, xt, xs, labels, epochs=50, batch_size=16, seed=2)
        accuracy = np.mean(model.predict(xt, xs) == labels)
        assert accuracy >= 0.99

    def test_regression_loss_decreases(self):
        rng = np.random.default_rng(31)
        xt, xs, _ = separable_dataset(rng, n=48)
        targets = 1.0 / (1.0 + np.exp(-xs[:, 0]))  # smooth function of the cue
        model = tiny_model(seed=2, output_activation="sigmoid", loss="mse", n_outputs=1)
        history = train_model(model, xt, xs, targets, epochs=10, batch_size=16, seed=3)
        losses = [h["loss"] for h in history]
        increases = sum(1 for a, b in zip(losses, losses[1:]) if b > a)
        assert increases <= 2
        assert losses[-1] < losses[0]

    def test_same_seed_reproduces_trajectory_exactly(self):
        rng = np.random.default_rng(32)
        xt, xs, labels = separable_dataset(rng, n=32)
        runs = []
        for _ in range(2):
            model = tiny_model(seed=4)
            history = train_model(model, xt, xs, labels, epochs=5, batch_size=8, seed=5)
            runs.append((history[-1]["loss"], {k: v.copy() for k, v in model.params().items()}))
        assert runs[0][0] == runs[1][0]
        for key in runs[0][1]:
            np.testing.assert_array_equal(runs[0][1][key], runs[1][1][key])

    def test_divergence_raises_numerical_error(self):
        # Inputs huge enough that the squared error overflows on the first batch.
        rng = np.random.default_rng(33)
        xt, xs, _ = separable_dataset(rng, n=16)
        targets = rng.standard_normal(16)
        model = tiny_model(seed=5, output_activation="linear", loss="mse", n_outputs=1)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericalError, match="diverged"):
                train_model(
                    model, xt, 1e200 * xs, targets, epochs=3, batch_size=8, seed=6
                )

    def test_training_log_has_epoch_loss_and_metric(self, tmp_path):
        import json

        rng = np.random.default_rng(34)
        xt, xs, labels = separable_dataset(rng, n=16)
        model = tiny_model(seed=6)
        log_path = tmp_path / "log.jsonl"
        train_model(model, xt, xs, labels, epochs=3, batch_size=8, seed=7, log_path=log_path)
        lines = log_path.read_text().strip().splitlines()
        assert len(lines) == 3
        first = json.loads(lines[0])
        assert first["epoch"] == 1
        assert set(first) == {"epoch", "loss", "accuracy"}


class TestMetrics:
    def test_kappa_formula_example(self):
        assert kappa_from_agreement(0.809, 0.5) == pytest.approx(0.618, abs=1e-12)

    def test_perfect_predictions(self):
        confusion = confusion_counts([0, 1, 2, 1], [0, 1, 2, 1], 3)
        assert cohen_kappa(confusion) == pytest.approx(1.0)
        assert root_mean_squared_error([0.0, 1.0], [0.0, 1.0]) == 0.0
        assert pearson_correlation([0.0, 1.0, 2.0], [0.0, 1.0, 2.0]) == pytest.approx(1.0)

    def test_anti_diagonal_regression_metrics(self):
        assert root_mean_squared_error([0.0, 1.0], [1.0, 0.0]) == pytest.approx(1.0)
        assert pearson_correlation([0.0, 1.0], [1.0, 0.0]) == pytest.approx(-1.0)

    def test_pcc_undefined_for_constant_predictions(self):
        with pytest.raises(NumericalError, match="zero variance"):
            pearson_correlation([0.0, 1.0], [0.5, 0.5])

    def test_kappa_never_exceeds_accuracy(self):
        rng = np.random.default_rng(35)
        for _ in range(1000):
            k = rng.integers(2, 5)
            confusion = rng.integers(0, 20, size=(k, k))
            total = confusion.sum()
            if total == 0:
                continue
            p0 = np.trace(confusion) / total
            pe = np.sum(confusion.sum(axis=0) * confusion.sum(axis=1)) / total**2
            if pe == 0.0 or p0 == 1.0:
                continue
            assert cohen_kappa(confusion) <= p0 + 1e-12

    def test_empirical_marginals_used_for_chance(self):
        confusion = np.array([[40, 10], [10, 40]])
        # Marginals are 50/50, so chance agreement is 0.5 and p0 is 0.8.
        assert cohen_kappa(confusion) == pytest.approx((0.8 - 0.5) / 0.5)

    def test_evaluate_model_classification_payload(self):
        rng = np.random.default_rng(36)
        xt, xs, labels = separable_dataset(rng, n=32)
        model = tiny_model(seed=8)
        train_model(model, xt, xs, labels, epochs=30, batch_size=8, seed=9)
        metrics = evaluate_model(model, xt, xs, labels)
        assert set(metrics) == {"accuracy", "kappa", "confusion"}
        assert metrics["kappa"] <= metrics["accuracy"] + 1e-12
        assert np.sum(metrics["confusion"]) == 32
