from __future__ import annotations

import numpy as np
import pytest

from ecmf.dataset import (
    Dataset,
    EmotionLabel,
    FeatureStream,
    LABELS,
    Modality,
    Sample,
    StreamSchema,
    StreamSpec,
    default_schema,
    synth_generate,
)
from ecmf.fusion import ModelConfig, init_model
from ecmf.refinement import LabelSource
from ecmf.training import TrainConfig


@pytest.fixture(scope="session")
def tiny_schema() -> StreamSchema:
    """Two streams, two modalities, deliberately unequal dims."""
    return StreamSchema((
        StreamSpec(Modality.AUDIO, "mfcc", 5),
        StreamSpec(Modality.TEXT, "tokens", 7),
    ))


@pytest.fixture(scope="session")
def small_schema() -> StreamSchema:
    return default_schema(12)


@pytest.fixture(scope="session")
def separable_ds(small_schema) -> Dataset:
    """Widely separated class clusters: anything that trains should ace this."""
    return synth_generate(n_per_class=10, schema=small_schema, separation=8.0,
                          noise_sigma=1.0, label_noise_rate=0.0, seed=5)


def fast_model_config(schema, **overrides) -> ModelConfig:
    kwargs = dict(schema=schema, hidden_dim=32, dropout_rate=0.1, num_heads=2, seed=5)
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def fast_train_config(**overrides) -> TrainConfig:
    kwargs = dict(learning_rate=1e-3, max_epochs=30, batch_size=8,
                  grad_clip_norm=1.0, patience=30, seed=5)
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


def forced_logit_model(schema, logits, hidden_dim=8, num_heads=2):
    """All-zero parameters make every token 0 and LayerNorm(0) = 0, so the
    classifier bias is the logit vector exactly."""
    model = init_model(ModelConfig(schema=schema, hidden_dim=hidden_dim,
                                   num_heads=num_heads, seed=0))
    params = {name: np.zeros_like(v) for name, v in model.params.items()}
    params["cls.b"] = np.asarray(logits, dtype=np.float64)
    model.load_params(params)
    return model


def synthetic_source(source_id: str, clean: dict, accuracy: float, seed: int) -> LabelSource:
    """A label source correct on `accuracy` of samples, wrong-uniform elsewhere."""
    rng = np.random.default_rng(seed)
    ids = sorted(clean)
    n_wrong = round((1 - accuracy) * len(ids))
    wrong_ids = set(rng.choice(ids, size=n_wrong, replace=False))
    labels = {}
    for i in ids:
        if i in wrong_ids:
            others = [l for l in LABELS if l is not clean[i]]
            labels[i] = others[int(rng.integers(0, 5))]
        else:
            labels[i] = clean[i]
    return LabelSource(source_id, labels, {i: 0.9 for i in ids})


def random_sample(schema: StreamSchema, rng: np.random.Generator,
                  sample_id: str = "s0", label: EmotionLabel | None = None) -> Sample:
    streams = {
        spec.name: FeatureStream(spec.modality, spec.name, rng.normal(size=spec.dim))
        for spec in schema
    }
    return Sample(sample_id, streams, gold_label=label)
