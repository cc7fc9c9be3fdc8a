"""Feature standardization and deterministic stratified fold splitting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import LABELS, Dataset, EmotionLabel, FeatureStream, Sample, StreamSchema
from .errors import EmptyDataset, InvalidConfig, SchemaMismatch, TooFewSamples

EPSILON = 1e-8


@dataclass(frozen=True)
class NormStats:
    """Per-stream, per-dimension mean and population std fitted on training data."""

    means: dict[str, np.ndarray]
    stds: dict[str, np.ndarray]
    epsilon: float = EPSILON

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "means": {k: v.tolist() for k, v in self.means.items()},
            "stds": {k: v.tolist() for k, v in self.stds.items()},
        }

    @staticmethod
    def from_json(obj: dict) -> "NormStats":
        return NormStats(
            means={k: np.asarray(v, dtype=np.float64) for k, v in obj["means"].items()},
            stds={k: np.asarray(v, dtype=np.float64) for k, v in obj["stds"].items()},
            epsilon=float(obj["epsilon"]),
        )


def fit_norm(train: Dataset | Sequence[Sample], schema: StreamSchema | None = None) -> NormStats:
    """Fit per-dimension mean/std (population, ddof=0) on the training set only."""
    if isinstance(train, Dataset):
        schema = train.schema
        samples = list(train)
    else:
        samples = list(train)
        if schema is None:
            raise InvalidConfig("fit_norm needs a schema when given a bare sample sequence")
    if not samples:
        raise EmptyDataset("cannot fit normalization on an empty dataset")
    means, stds = {}, {}
    for spec in schema:
        mat = np.stack([s.streams[spec.name].values for s in samples])
        means[spec.name] = mat.mean(axis=0)
        stds[spec.name] = mat.std(axis=0)
    return NormStats(means, stds)


def _norm_one(values: np.ndarray, mean: np.ndarray, std: np.ndarray, eps: float) -> np.ndarray:
    return (values - mean) / (std + eps)


def apply_norm(obj: Dataset | Sample, stats: NormStats):
    """Standardize a Sample or Dataset: (x - mean) / (std + epsilon), per stream."""
    if isinstance(obj, Sample):
        return _norm_sample(obj, stats)
    if isinstance(obj, Dataset):
        return Dataset(obj.schema, tuple(_norm_sample(s, stats) for s in obj))
    raise SchemaMismatch(f"cannot normalize object of type {type(obj).__name__}")


def _norm_sample(sample: Sample, stats: NormStats) -> Sample:
    if set(sample.streams) != set(stats.means):
        raise SchemaMismatch(
            f"sample {sample.sample_id!r} streams {sorted(sample.streams)} do not match "
            f"normalization stats {sorted(stats.means)}"
        )
    streams = {}
    for name, st in sample.streams.items():
        if st.values.shape != stats.means[name].shape:
            raise SchemaMismatch(f"stream {name!r}: shape {st.values.shape} vs stats {stats.means[name].shape}")
        streams[name] = FeatureStream(
            st.modality, name, _norm_one(st.values, stats.means[name], stats.stds[name], stats.epsilon)
        )
    return Sample(sample.sample_id, streams, sample.gold_label, sample.transcript)


def apply_norm_arrays(arrays: dict[str, np.ndarray], stats: NormStats) -> dict[str, np.ndarray]:
    """Array fast path: standardize {stream: (n, dim)} feature matrices."""
    if set(arrays) != set(stats.means):
        raise SchemaMismatch("feature arrays do not match normalization stats")
    return {
        name: _norm_one(mat, stats.means[name], stats.stds[name], stats.epsilon)
        for name, mat in arrays.items()
    }


@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignment: dict[str, int]

    def ids_in_fold(self, fold: int) -> list[str]:
        return [sid for sid, f in self.assignment.items() if f == fold]

    def ids_not_in_fold(self, fold: int) -> list[str]:
        return [sid for sid, f in self.assignment.items() if f != fold]

    def to_json(self) -> dict:
        return {"k": self.k, "assignment": dict(self.assignment)}

    @staticmethod
    def from_json(obj: dict) -> "FoldSplit":
        return FoldSplit(int(obj["k"]), {str(k): int(v) for k, v in obj["assignment"].items()})


def make_folds(dataset: Dataset | Sequence[Sample], k: int, seed: int) -> FoldSplit:
    """Stratified k-fold assignment of the labeled samples.

    Within each class (canonical label order), samples are shuffled by the
    seed and dealt round-robin to folds, so per-class fold counts differ by
    at most one. Unlabeled samples are excluded. A class present in the
    labeled set with fewer than k samples raises TooFewSamples; classes
    absent entirely are simply skipped.
    """
    if k < 2:
        raise InvalidConfig(f"fold count must be at least 2, got {k}")
    by_class: dict[EmotionLabel, list[str]] = {lab: [] for lab in LABELS}
    for s in dataset:
        if s.labeled:
            by_class[s.gold_label].append(s.sample_id)

    rng = np.random.default_rng(seed)
    assignment: dict[str, int] = {}
    for lab in LABELS:
        ids = by_class[lab]
        if not ids:
            continue
        if len(ids) < k:
            raise TooFewSamples(lab.value, len(ids), k)
        order = rng.permutation(len(ids))
        for pos, idx in enumerate(order):
            assignment[ids[idx]] = pos % k
    return FoldSplit(k, assignment)


def save_fold_split(split: FoldSplit, path: str | Path) -> None:
    Path(path).write_text(json.dumps(split.to_json(), indent=2) + "\n", encoding="utf-8")


def load_fold_split(path: str | Path) -> FoldSplit:
    return FoldSplit.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
