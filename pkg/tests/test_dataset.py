from __future__ import annotations

import json

import numpy as np
import pytest

from ecmf.dataset import (
    Dataset,
    EmotionLabel,
    FeatureStream,
    LABELS,
    Modality,
    NUM_CLASSES,
    Sample,
    StreamSchema,
    StreamSpec,
    default_schema,
    infer_schema,
    ingest,
    load_labels,
    save_labels,
    synth_clean_labels,
    synth_generate,
    write_manifest,
)
from ecmf.errors import (
    DimMismatch,
    DuplicateRecord,
    EmptyDataset,
    InvalidConfig,
    MissingStream,
    ParseFailure,
    SchemaMismatch,
)

from conftest import random_sample


class TestLabels:
    def test_canonical_order(self):
        assert [l.value for l in LABELS] == [
            "worried", "happy", "neutral", "angry", "surprised", "sad"]
        assert NUM_CLASSES == 6

    def test_index_round_trip(self):
        for i, lab in enumerate(LABELS):
            assert lab.index == i
            assert EmotionLabel.from_index(i) is lab

    def test_parse(self):
        assert EmotionLabel.parse("happy") is EmotionLabel.HAPPY
        assert EmotionLabel.parse(" Sad ") is EmotionLabel.SAD
        with pytest.raises(ParseFailure):
            EmotionLabel.parse("ecstatic")


class TestSchema:
    def test_default_schema_counts(self):
        schema = default_schema(64)
        by_mod = {m: len(schema.for_modality(m)) for m in schema.modalities()}
        assert by_mod == {Modality.AUDIO: 3, Modality.TEXT: 6, Modality.VIDEO: 2}
        assert len(schema) == 11
        assert all(spec.dim == 64 for spec in schema)

    def test_duplicate_stream_name_rejected(self):
        with pytest.raises(InvalidConfig):
            StreamSchema((
                StreamSpec(Modality.AUDIO, "x", 4),
                StreamSpec(Modality.TEXT, "x", 4),
            ))

    def test_restrict(self):
        schema = default_schema(8)
        audio = schema.restrict(Modality.AUDIO)
        assert len(audio) == 3
        assert all(s.modality is Modality.AUDIO for s in audio)

    def test_json_round_trip(self):
        schema = default_schema(16)
        again = StreamSchema.from_json(json.loads(json.dumps(schema.to_json())))
        assert again == schema


class TestDataset:
    def test_duplicate_sample_id(self, tiny_schema):
        rng = np.random.default_rng(0)
        s = random_sample(tiny_schema, rng, "dup")
        with pytest.raises(DuplicateRecord):
            Dataset(tiny_schema, (s, s))

    def test_missing_stream(self, tiny_schema):
        rng = np.random.default_rng(0)
        s = random_sample(tiny_schema, rng)
        incomplete = Sample("s1", {"mfcc": s.streams["mfcc"]})
        with pytest.raises(MissingStream):
            Dataset(tiny_schema, (incomplete,))

    def test_wrong_dim(self, tiny_schema):
        streams = {
            "mfcc": FeatureStream(Modality.AUDIO, "mfcc", np.zeros(5)),
            "tokens": FeatureStream(Modality.TEXT, "tokens", np.zeros(3)),  # schema says 7
        }
        with pytest.raises(DimMismatch):
            Dataset(tiny_schema, (Sample("s1", streams),))

    def test_with_labels_replaces_only_listed(self, tiny_schema):
        rng = np.random.default_rng(1)
        a = random_sample(tiny_schema, rng, "a", EmotionLabel.HAPPY)
        b = random_sample(tiny_schema, rng, "b", EmotionLabel.SAD)
        ds = Dataset(tiny_schema, (a, b)).with_labels({"a": EmotionLabel.ANGRY})
        assert ds.by_id("a").gold_label is EmotionLabel.ANGRY
        assert ds.by_id("b").gold_label is EmotionLabel.SAD

    def test_restrict_to_modality(self, small_schema):
        ds = synth_generate(n_per_class=2, schema=small_schema, separation=2.0,
                            noise_sigma=1.0, label_noise_rate=0.0, seed=0)
        audio = ds.restrict_to_modality(Modality.AUDIO)
        assert set(audio.schema.names) == set(small_schema.restrict(Modality.AUDIO).names)
        for s in audio:
            assert set(s.streams) == set(audio.schema.names)
        assert len(audio) == len(ds)


class TestSynth:
    def test_counts(self, small_schema):
        ds = synth_generate(n_per_class=10, schema=small_schema, separation=2.0,
                            noise_sigma=1.0, label_noise_rate=0.0, seed=7)
        assert len(ds) == 60
        per_class = {lab: 0 for lab in LABELS}
        for s in ds:
            per_class[s.gold_label] += 1
        assert all(c == 10 for c in per_class.values())

    def test_deterministic(self, small_schema):
        a = synth_generate(n_per_class=3, schema=small_schema, separation=2.0,
                           noise_sigma=1.0, label_noise_rate=0.1, seed=3)
        b = synth_generate(n_per_class=3, schema=small_schema, separation=2.0,
                           noise_sigma=1.0, label_noise_rate=0.1, seed=3)
        for sa, sb in zip(a, b):
            assert sa.sample_id == sb.sample_id
            assert sa.gold_label == sb.gold_label
            for name in sa.streams:
                assert np.array_equal(sa.streams[name].values, sb.streams[name].values)

    def test_label_noise_fraction(self, small_schema):
        ds = synth_generate(n_per_class=50, schema=small_schema, separation=2.0,
                            noise_sigma=1.0, label_noise_rate=0.2, seed=11)
        clean = synth_clean_labels(ds)
        wrong = sum(1 for s in ds if s.gold_label is not clean[s.sample_id])
        assert abs(wrong / len(ds) - 0.2) <= 0.05

    def test_nearest_class_mean_is_perfect_when_separated(self, small_schema, separable_ds):
        clean = synth_clean_labels(separable_ds)
        # class means of concatenated streams, then 1-NN on means
        def flat(s):
            return np.concatenate([s.streams[n].values for n in small_schema.names])
        means = {}
        for lab in LABELS:
            rows = [flat(s) for s in separable_ds if clean[s.sample_id] is lab]
            means[lab] = np.mean(rows, axis=0)
        hits = sum(
            1 for s in separable_ds
            if min(means, key=lambda lab: np.linalg.norm(flat(s) - means[lab])) is clean[s.sample_id]
        )
        assert hits == len(separable_ds)

    def test_separation_must_be_positive(self, small_schema):
        with pytest.raises(InvalidConfig):
            synth_generate(n_per_class=2, schema=small_schema, separation=0.0,
                           noise_sigma=1.0, label_noise_rate=0.0, seed=0)


class TestManifestIO:
    def test_round_trip(self, small_schema, tmp_path):
        ds = synth_generate(n_per_class=3, schema=small_schema, separation=2.0,
                            noise_sigma=1.0, label_noise_rate=0.0, seed=1)
        path = tmp_path / "m.jsonl"
        write_manifest(ds, path)
        again = ingest(path, small_schema)   # ingest orders by sample_id
        assert len(again) == len(ds)
        for sa in ds:
            sb = again.by_id(sa.sample_id)
            assert sa.gold_label == sb.gold_label
            for name in small_schema.names:
                assert np.array_equal(sa.streams[name].values, sb.streams[name].values)

    def test_infer_schema_matches(self, small_schema, tmp_path):
        ds = synth_generate(n_per_class=2, schema=small_schema, separation=2.0,
                            noise_sigma=1.0, label_noise_rate=0.0, seed=1)
        path = tmp_path / "m.jsonl"
        write_manifest(ds, path)
        inferred = infer_schema(path)
        assert set(inferred.names) == set(small_schema.names)
        assert {s.name: (s.modality, s.dim) for s in inferred} == \
               {s.name: (s.modality, s.dim) for s in small_schema}

    def test_infer_schema_conflicting_dim(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        lines = [
            {"kind": "feature", "sample_id": "a", "stream_name": "x",
             "modality": "audio", "values": [1.0, 2.0]},
            {"kind": "feature", "sample_id": "b", "stream_name": "x",
             "modality": "audio", "values": [1.0, 2.0, 3.0]},
        ]
        path.write_text("\n".join(json.dumps(l) for l in lines) + "\n")
        with pytest.raises(SchemaMismatch):
            infer_schema(path)

    def test_infer_schema_empty(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(EmptyDataset):
            infer_schema(path)

    def test_ingest_bad_json_names_line(self, small_schema, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"kind": "feature"\n')
        with pytest.raises(ParseFailure) as exc:
            ingest(path, small_schema)
        assert exc.value.line == 1

    def test_ingest_unknown_stream(self, tiny_schema, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps({
            "kind": "feature", "sample_id": "a", "stream_name": "nope",
            "modality": "audio", "values": [1.0] * 5}) + "\n")
        with pytest.raises(SchemaMismatch):
            ingest(path, tiny_schema)


class TestLabelFiles:
    def test_round_trip(self, tmp_path):
        labels = {"a": EmotionLabel.HAPPY, "b": EmotionLabel.SAD}
        path = tmp_path / "labels.jsonl"
        save_labels(labels, path)
        assert load_labels(path) == labels

    def test_unknown_label_token(self, tmp_path):
        path = tmp_path / "labels.jsonl"
        path.write_text('{"sample_id": "a", "label": "meh"}\n')
        with pytest.raises(ParseFailure):
            load_labels(path)
