from __future__ import annotations

import math

import numpy as np
import pytest

from ecmf.dataset import (
    Dataset,
    EmotionLabel,
    FeatureStream,
    LABELS,
    Modality,
    Sample,
    synth_generate,
)
from ecmf.errors import InvalidConfig, NonFiniteGradient, NonFiniteLoss
from ecmf.fusion import ModelConfig, init_model, load_checkpoint, save_checkpoint
from ecmf.training import (
    AdamState,
    TrainConfig,
    TrainedModel,
    adam_step,
    clip_gradients,
    cross_entropy,
    dataset_to_arrays,
    evaluate,
    global_grad_norm,
    loss_and_gradients,
    run_cv,
    train_one,
)

from conftest import fast_model_config, fast_train_config, random_sample


class TestTrainConfig:
    def test_invariants(self):
        with pytest.raises(InvalidConfig):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(InvalidConfig):
            TrainConfig(grad_clip_norm=0.0)
        with pytest.raises(InvalidConfig):
            TrainConfig(patience=-1)
        with pytest.raises(InvalidConfig):
            TrainConfig(batch_size=0)

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.learning_rate, cfg.max_epochs, cfg.grad_clip_norm,
                cfg.batch_size, cfg.patience) == (5e-5, 200, 1.0, 32, 30)

    def test_json_round_trip(self):
        cfg = TrainConfig(learning_rate=1e-3, max_epochs=7, batch_size=4,
                          grad_clip_norm=0.5, patience=2, seed=9)
        assert TrainConfig.from_json(cfg.to_json()) == cfg


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert cross_entropy(np.zeros(6), EmotionLabel.NEUTRAL) == pytest.approx(
            math.log(6), abs=1e-12)
        assert cross_entropy(np.zeros(6), 0) == pytest.approx(1.791759, abs=1e-6)

    def test_saturated_gold(self):
        z = np.zeros(6)
        z[2] = 100.0
        assert cross_entropy(z, 2) < 1e-6

    def test_matches_direct_softmax_oracle(self):
        z = np.array([1.0, 2.0, 3.0, 0.0, 0.0, 0.0])
        probs = np.exp(z) / np.exp(z).sum()
        assert cross_entropy(z, 2) == pytest.approx(-math.log(probs[2]), abs=1e-12)


class TestGradients:
    def test_duplicated_batch_keeps_mean_gradient(self, tiny_schema):
        model = init_model(ModelConfig(schema=tiny_schema, hidden_dim=8, num_heads=2,
                                       seed=1, dropout_rate=0.0))
        rng = np.random.default_rng(0)
        samples = [random_sample(tiny_schema, rng, f"s{i}", LABELS[i % 6]) for i in range(4)]
        feats, gold, _ = dataset_to_arrays(samples, tiny_schema)
        _, grads = loss_and_gradients(model, feats, gold)
        doubled = {k: np.concatenate([v, v]) for k, v in feats.items()}
        _, grads2 = loss_and_gradients(model, doubled, np.concatenate([gold, gold]))
        for name in grads:
            assert np.allclose(grads[name], grads2[name], atol=1e-12), name

    def test_disabled_components_have_zero_gradients(self, tiny_schema):
        model = init_model(ModelConfig(schema=tiny_schema, hidden_dim=8, num_heads=2,
                                       seed=1, dropout_rate=0.0,
                                       enable_modal_token=False,
                                       enable_residual_mlp=False))
        rng = np.random.default_rng(0)
        samples = [random_sample(tiny_schema, rng, f"s{i}", LABELS[i % 6]) for i in range(4)]
        feats, gold, _ = dataset_to_arrays(samples, tiny_schema)
        _, grads = loss_and_gradients(model, feats, gold)
        for name, g in grads.items():
            if name.startswith("modal_token.") or name.endswith((".w_mid", ".b_mid")):
                assert np.array_equal(g, np.zeros_like(g)), name
            elif name.startswith("enc.") and name.endswith(".w_in"):
                assert np.abs(g).max() > 0, name


class TestClip:
    def _grads(self, target_norm):
        g = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}   # norm 5
        scale = target_norm / 5.0
        return {k: v * scale for k, v in g.items()}

    def test_below_threshold_untouched(self):
        grads = self._grads(0.5)
        clipped, norm = clip_gradients(grads, 1.0)
        assert norm == pytest.approx(0.5, abs=1e-12)
        for k in grads:
            assert clipped[k] is grads[k]          # exact passthrough, same objects

    def test_above_threshold_rescaled_to_cap(self):
        clipped, norm = clip_gradients(self._grads(4.0), 1.0)
        assert norm == pytest.approx(4.0, abs=1e-12)
        assert global_grad_norm(clipped) == pytest.approx(1.0, abs=1e-9)

    def test_direction_preserved(self):
        grads = self._grads(4.0)
        clipped, _ = clip_gradients(grads, 1.0)
        for k in grads:
            ratio = clipped[k][grads[k] != 0] / grads[k][grads[k] != 0]
            assert np.allclose(ratio, 0.25, atol=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteGradient):
            clip_gradients({"a": np.array([np.inf])}, 1.0)

    def test_step_with_under_cap_gradients_equals_unclipped(self, tiny_schema):
        cfg = TrainConfig(learning_rate=1e-3)
        grads = self._grads(0.5)
        a = init_model(ModelConfig(schema=tiny_schema, hidden_dim=8, num_heads=2, seed=2))
        b = init_model(ModelConfig(schema=tiny_schema, hidden_dim=8, num_heads=2, seed=2))
        # restrict to two fake params so both models see identical updates
        for model in (a, b):
            model.params.clear()
            model.params.update({"a": np.ones(2), "b": np.ones((1, 1))})
        state_a, state_b = AdamState.for_model(a), AdamState.for_model(b)
        adam_step(a, grads, state_a, cfg)
        clipped, _ = clip_gradients(grads, 1.0)
        adam_step(b, clipped, state_b, cfg)
        for k in a.params:
            assert np.array_equal(a.params[k], b.params[k])


class TestTrainOne:
    def test_learns_separable_data(self, small_schema, separable_ds):
        trained, report = train_one(separable_ds, None, fast_model_config(small_schema),
                                    fast_train_config())
        train_metrics = evaluate(trained, separable_ds)
        assert train_metrics.accuracy >= 0.99

    def test_loss_decreases_over_first_epochs(self, small_schema, separable_ds):
        _, report = train_one(separable_ds, None, fast_model_config(small_schema),
                              fast_train_config(max_epochs=5))
        assert report.train_losses[-1] < report.train_losses[0]

    def test_same_seed_same_loss_curve(self, small_schema, separable_ds):
        _, a = train_one(separable_ds, None, fast_model_config(small_schema),
                         fast_train_config(max_epochs=6))
        _, b = train_one(separable_ds, None, fast_model_config(small_schema),
                         fast_train_config(max_epochs=6))
        assert a.train_losses == b.train_losses

    def test_best_epoch_attains_max_val_waf(self, small_schema, separable_ds):
        samples = list(separable_ds.labeled_samples())
        _, report = train_one(samples[:48], samples[48:], fast_model_config(small_schema),
                              fast_train_config(max_epochs=10))
        assert report.val_wafs[report.best_epoch] == max(report.val_wafs)
        assert report.best_val_waf == max(report.val_wafs)

    def test_patience_zero_stops_at_first_non_improving_epoch(self, small_schema, separable_ds):
        samples = list(separable_ds.labeled_samples())
        _, report = train_one(samples[:48], samples[48:], fast_model_config(small_schema),
                              fast_train_config(max_epochs=50, patience=0))
        wafs = report.val_wafs
        # expected stopping epoch: first epoch (after the first) whose WAF does
        # not strictly improve on the running best
        expected = None
        best = float("-inf")
        for i, w in enumerate(wafs):
            if w > best:
                best = w
            else:
                expected = i + 1
                break
        if expected is None:
            assert not report.stopped_early
        else:
            assert report.stopped_early
            assert report.epochs_run == expected

    def test_non_finite_features_raise_with_epoch(self, tiny_schema):
        rng = np.random.default_rng(0)
        samples = [random_sample(tiny_schema, rng, f"s{i}", LABELS[i % 6]) for i in range(8)]
        bad_streams = dict(samples[0].streams)
        bad_streams["mfcc"] = FeatureStream(Modality.AUDIO, "mfcc", np.full(5, np.nan))
        samples[0] = Sample("s0", bad_streams, gold_label=samples[0].gold_label)
        cfg = ModelConfig(schema=tiny_schema, hidden_dim=8, num_heads=2, seed=0,
                          enable_norm=False)
        with pytest.raises(NonFiniteLoss) as exc:
            train_one(samples, None, cfg, fast_train_config(max_epochs=3))
        assert exc.value.epoch == 1

    def test_checkpoint_round_trip_preserves_predictions(self, small_schema, separable_ds,
                                                         tmp_path):
        trained, _ = train_one(separable_ds, None, fast_model_config(small_schema),
                               fast_train_config(max_epochs=5))
        path = tmp_path / "m.npz"
        save_checkpoint(path, trained.model, trained.norm_stats)
        model, stats = load_checkpoint(path)
        again = TrainedModel(model, stats)
        for s in separable_ds:
            assert np.array_equal(trained.predict_proba([s]), again.predict_proba([s]))

    def test_validation_features_cannot_leak_into_training(self, small_schema, separable_ds):
        samples = list(separable_ds.labeled_samples())
        train, val = samples[:48], samples[48:]
        poisoned = []
        for s in val:
            streams = {
                n: FeatureStream(st.modality, st.stream_name, st.values + 1000.0)
                for n, st in s.streams.items()
            }
            poisoned.append(Sample(s.sample_id, streams, gold_label=s.gold_label))
        cfg = fast_train_config(max_epochs=5, patience=5)
        _, clean_report = train_one(train, val, fast_model_config(small_schema), cfg)
        _, poisoned_report = train_one(train, poisoned, fast_model_config(small_schema), cfg)
        assert clean_report.train_losses == poisoned_report.train_losses


class TestRunCv:
    def test_five_fold_mean_of_best(self, small_schema, separable_ds):
        report = run_cv(separable_ds, fast_model_config(small_schema),
                        fast_train_config(max_epochs=8), k=5)
        assert report.k == 5
        assert len(report.train_reports) == 5
        assert len(report.fold_wafs) == 5
        for waf, fold_report in zip(report.fold_wafs, report.train_reports):
            assert waf == max(fold_report.val_wafs)
        assert report.mean_waf == pytest.approx(np.mean(report.fold_wafs), abs=1e-15)
        assert report.std_waf == pytest.approx(np.std(report.fold_wafs), abs=1e-15)

    def test_six_fold_supported(self, small_schema):
        ds = synth_generate(n_per_class=6, schema=small_schema, separation=8.0,
                            noise_sigma=1.0, label_noise_rate=0.0, seed=3)
        report = run_cv(ds, fast_model_config(small_schema),
                        fast_train_config(max_epochs=3), k=6)
        assert report.k == 6
        assert len(report.fold_wafs) == 6

    def test_separable_data_aces_cv(self, small_schema, separable_ds):
        report = run_cv(separable_ds, fast_model_config(small_schema),
                        fast_train_config(), k=5)
        assert report.mean_waf >= 0.99

    def test_report_json_has_no_timestamps_and_is_stable(self, small_schema, separable_ds):
        import json
        a = run_cv(separable_ds, fast_model_config(small_schema),
                   fast_train_config(max_epochs=4), k=5)
        b = run_cv(separable_ds, fast_model_config(small_schema),
                   fast_train_config(max_epochs=4), k=5)
        sa, sb = json.dumps(a.to_json(), sort_keys=True), json.dumps(b.to_json(), sort_keys=True)
        assert sa == sb
        assert "time" not in sa and "date" not in sa
