from __future__ import annotations

import json

import numpy as np
import pytest

from ecmf.dataset import Dataset, EmotionLabel, LABELS, synth_generate
from ecmf.errors import InvalidConfig, TooFewSamples
from ecmf.preprocess import (
    FoldSplit,
    NormStats,
    apply_norm,
    fit_norm,
    load_fold_split,
    make_folds,
    save_fold_split,
)

from conftest import random_sample


class TestNorm:
    def test_train_features_standardized(self, small_schema, separable_ds):
        stats = fit_norm(separable_ds)
        normed = apply_norm(separable_ds, stats)
        for name in small_schema.names:
            mat = np.stack([s.streams[name].values for s in normed])
            assert np.allclose(mat.mean(axis=0), 0.0, atol=1e-9)
            assert np.allclose(mat.std(axis=0), 1.0, atol=1e-6)

    def test_val_uses_train_stats(self, small_schema, separable_ds):
        train = separable_ds.samples[:30]
        stats = fit_norm(train, small_schema)
        held_out = apply_norm(separable_ds.samples[30], stats)
        name = small_schema.names[0]
        mean = np.mean([s.streams[name].values for s in train], axis=0)
        std = np.std([s.streams[name].values for s in train], axis=0)
        expected = (separable_ds.samples[30].streams[name].values - mean) / (std + stats.epsilon)
        assert np.allclose(held_out.streams[name].values, expected, atol=1e-12)

    def test_zero_variance_dim_guarded(self, tiny_schema):
        rng = np.random.default_rng(0)
        samples = []
        for i in range(4):
            s = random_sample(tiny_schema, rng, f"s{i}", EmotionLabel.HAPPY)
            s.streams["mfcc"].values[0] = 3.0  # constant across samples
            samples.append(s)
        stats = fit_norm(samples, tiny_schema)
        normed = apply_norm(samples[0], stats)
        assert np.isfinite(normed.streams["mfcc"].values).all()
        assert normed.streams["mfcc"].values[0] == pytest.approx(0.0)

    def test_bare_sequence_needs_schema(self, tiny_schema):
        rng = np.random.default_rng(0)
        samples = [random_sample(tiny_schema, rng, "a")]
        with pytest.raises(InvalidConfig):
            fit_norm(samples)

    def test_json_round_trip(self, tiny_schema):
        rng = np.random.default_rng(1)
        samples = [random_sample(tiny_schema, rng, f"s{i}") for i in range(3)]
        stats = fit_norm(samples, tiny_schema)
        again = NormStats.from_json(json.loads(json.dumps(stats.to_json())))
        for name in stats.means:
            assert np.array_equal(stats.means[name], again.means[name])
            assert np.array_equal(stats.stds[name], again.stds[name])
        assert stats.epsilon == again.epsilon


def fold_sizes_within_one(split: FoldSplit, labels: dict[str, EmotionLabel], k: int):
    for lab in LABELS:
        class_ids = {i for i, l in labels.items() if l is lab}
        if not class_ids:
            continue
        counts = [len(class_ids & set(split.ids_in_fold(f))) for f in range(k)]
        assert max(counts) - min(counts) <= 1, (lab, counts)


class TestFolds:
    @pytest.mark.parametrize("k", [5, 6])
    def test_stratified_partition(self, small_schema, k):
        ds = synth_generate(n_per_class=13, schema=small_schema, separation=2.0,
                            noise_sigma=1.0, label_noise_rate=0.0, seed=2)
        split = make_folds(ds, k, seed=4)
        all_ids = [i for f in range(k) for i in split.ids_in_fold(f)]
        assert len(all_ids) == len(set(all_ids)) == len(ds)        # disjoint + exhaustive
        assert set(all_ids) == {s.sample_id for s in ds}
        fold_sizes_within_one(split, {s.sample_id: s.gold_label for s in ds}, k)

    def test_in_and_not_in_partition(self, small_schema):
        ds = synth_generate(n_per_class=10, schema=small_schema, separation=2.0,
                            noise_sigma=1.0, label_noise_rate=0.0, seed=2)
        split = make_folds(ds, 5, seed=0)
        for f in range(5):
            inside, outside = set(split.ids_in_fold(f)), set(split.ids_not_in_fold(f))
            assert not inside & outside
            assert inside | outside == {s.sample_id for s in ds}

    def test_deterministic_by_seed(self, small_schema):
        ds = synth_generate(n_per_class=10, schema=small_schema, separation=2.0,
                            noise_sigma=1.0, label_noise_rate=0.0, seed=2)
        a = make_folds(ds, 5, seed=9)
        b = make_folds(ds, 5, seed=9)
        c = make_folds(ds, 5, seed=10)
        assert [a.ids_in_fold(f) for f in range(5)] == [b.ids_in_fold(f) for f in range(5)]
        assert [a.ids_in_fold(f) for f in range(5)] != [c.ids_in_fold(f) for f in range(5)]

    def test_too_few_samples(self, small_schema):
        ds = synth_generate(n_per_class=3, schema=small_schema, separation=2.0,
                            noise_sigma=1.0, label_noise_rate=0.0, seed=2)
        with pytest.raises(TooFewSamples):
            make_folds(ds, 5, seed=0)

    def test_k_below_two_rejected(self, small_schema, separable_ds):
        with pytest.raises(InvalidConfig):
            make_folds(separable_ds, 1, seed=0)

    def test_save_load_round_trip(self, small_schema, separable_ds, tmp_path):
        split = make_folds(separable_ds, 5, seed=1)
        path = tmp_path / "folds.json"
        save_fold_split(split, path)
        again = load_fold_split(path)
        assert [split.ids_in_fold(f) for f in range(5)] == \
               [again.ids_in_fold(f) for f in range(5)]
