"""Data model, feature-manifest ingestion, synthetic data, and label files.

A clip ("sample") is a bag of fixed-length feature vectors, one per extractor
stream, grouped into three modalities. Feature extraction itself happens
upstream; this module only ingests its outputs from JSON-Lines manifests.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    DimMismatch,
    DuplicateRecord,
    EmptyDataset,
    InvalidConfig,
    IoFailure,
    MissingStream,
    NonFiniteValue,
    ParseFailure,
    SchemaMismatch,
)


class EmotionLabel(enum.Enum):
    """The six emotion categories, in canonical (index) order."""

    WORRIED = "worried"
    HAPPY = "happy"
    NEUTRAL = "neutral"
    ANGRY = "angry"
    SURPRISED = "surprised"
    SAD = "sad"

    @property
    def index(self) -> int:
        return _LABEL_INDEX[self]

    @staticmethod
    def from_index(i: int) -> "EmotionLabel":
        return LABELS[i]

    @staticmethod
    def parse(token: str) -> "EmotionLabel":
        try:
            return EmotionLabel(str(token).strip().lower())
        except ValueError:
            raise ParseFailure(f"unknown emotion label {token!r}") from None


LABELS: tuple[EmotionLabel, ...] = tuple(EmotionLabel)
NUM_CLASSES = len(LABELS)
_LABEL_INDEX = {lab: i for i, lab in enumerate(LABELS)}


class Modality(enum.Enum):
    AUDIO = "audio"
    TEXT = "text"
    VIDEO = "video"

    @staticmethod
    def parse(token: str) -> "Modality":
        try:
            return Modality(token)
        except ValueError:
            raise ParseFailure(f"unknown modality {token!r}") from None


MODALITIES: tuple[Modality, ...] = tuple(Modality)  # fixed order: audio, text, video


@dataclass(frozen=True)
class StreamSpec:
    modality: Modality
    name: str
    dim: int


@dataclass(frozen=True)
class StreamSchema:
    """Ordered stream layout; the ordering fixes the downstream token order."""

    entries: tuple[StreamSpec, ...]

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise InvalidConfig("stream names must be unique within a schema")
        for e in self.entries:
            if e.dim <= 0:
                raise InvalidConfig(f"stream {e.name!r} has non-positive dim {e.dim}")

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    def modalities(self) -> tuple[Modality, ...]:
        """Modalities present, in fixed (audio, text, video) order."""
        present = {e.modality for e in self.entries}
        return tuple(m for m in MODALITIES if m in present)

    def for_modality(self, modality: Modality) -> tuple[StreamSpec, ...]:
        return tuple(e for e in self.entries if e.modality is modality)

    def restrict(self, modality: Modality) -> "StreamSchema":
        entries = self.for_modality(modality)
        if not entries:
            raise SchemaMismatch(f"schema has no {modality.value} streams")
        return StreamSchema(entries)

    def to_json(self) -> list[dict]:
        return [{"modality": e.modality.value, "stream_name": e.name, "dim": e.dim} for e in self.entries]

    @staticmethod
    def from_json(obj: list[dict]) -> "StreamSchema":
        return StreamSchema(tuple(
            StreamSpec(Modality.parse(e["modality"]), e["stream_name"], int(e["dim"])) for e in obj
        ))


def default_schema(dim: int = 64) -> StreamSchema:
    """The default 11-stream layout: audio x3, text x6, video x2."""
    audio = ["hubert_L16", "hubert_L18", "hubert_L20"]
    text = ["roberta_text", "gpt4_label", "gpt4_keywords", "qwen_label", "qwen_description", "qwen_clues"]
    video = ["frame", "face"]
    entries = (
        [StreamSpec(Modality.AUDIO, n, dim) for n in audio]
        + [StreamSpec(Modality.TEXT, n, dim) for n in text]
        + [StreamSpec(Modality.VIDEO, n, dim) for n in video]
    )
    return StreamSchema(tuple(entries))


@dataclass(frozen=True)
class FeatureStream:
    modality: Modality
    stream_name: str
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class Sample:
    sample_id: str
    streams: Mapping[str, FeatureStream]
    gold_label: EmotionLabel | None = None
    transcript: str | None = None

    @property
    def labeled(self) -> bool:
        return self.gold_label is not None


@dataclass(frozen=True)
class Dataset:
    schema: StreamSchema
    samples: tuple[Sample, ...]

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        seen: set[str] = set()
        for s in self.samples:
            if s.sample_id in seen:
                raise DuplicateRecord(s.sample_id)
            seen.add(s.sample_id)
            _check_conforms(s, self.schema)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def by_id(self, sample_id: str) -> Sample:
        for s in self.samples:
            if s.sample_id == sample_id:
                return s
        raise KeyError(sample_id)

    def labeled_samples(self) -> tuple[Sample, ...]:
        return tuple(s for s in self.samples if s.labeled)

    def restrict_to_modality(self, modality: Modality) -> "Dataset":
        """Project every sample onto one modality's streams (weak-classifier view)."""
        schema = self.schema.restrict(modality)
        keep = set(schema.names)
        samples = tuple(
            Sample(
                sample_id=s.sample_id,
                streams={n: st for n, st in s.streams.items() if n in keep},
                gold_label=s.gold_label,
                transcript=s.transcript,
            )
            for s in self.samples
        )
        return Dataset(schema, samples)

    def with_labels(self, labels: Mapping[str, EmotionLabel]) -> "Dataset":
        """Replace gold labels for the listed sample ids; others keep theirs."""
        samples = tuple(
            Sample(s.sample_id, s.streams, labels.get(s.sample_id, s.gold_label), s.transcript)
            for s in self.samples
        )
        return Dataset(self.schema, samples)


def _check_conforms(sample: Sample, schema: StreamSchema) -> None:
    for spec in schema:
        stream = sample.streams.get(spec.name)
        if stream is None:
            raise MissingStream(sample.sample_id, spec.name)
        if stream.dim != spec.dim:
            raise DimMismatch(sample.sample_id, spec.name, spec.dim, stream.dim)
        if stream.modality is not spec.modality:
            raise SchemaMismatch(
                f"sample {sample.sample_id!r} stream {spec.name!r} is "
                f"{stream.modality.value}, schema says {spec.modality.value}"
            )
        if not np.all(np.isfinite(stream.values)):
            raise NonFiniteValue(sample.sample_id, spec.name)
    extra = set(sample.streams) - set(schema.names)
    if extra:
        raise SchemaMismatch(
            f"sample {sample.sample_id!r} carries streams not in schema: {sorted(extra)}"
        )


# --- manifest ingestion ------------------------------------------------------

def ingest(manifest_path: str | Path, schema: StreamSchema) -> Dataset:
    """Parse a JSON-Lines feature manifest into a schema-conforming Dataset.

    Record kinds (one JSON object per line):
      feature    {"sample_id", "modality", "stream_name", "dim", "values"}
      label      {"sample_id", "gold_label"}
      transcript {"sample_id", "transcript"}

    Samples come out sorted by sample_id regardless of record order.
    """
    path = Path(manifest_path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise IoFailure(f"cannot read manifest {path}: {e}") from e

    streams: dict[str, dict[str, FeatureStream]] = {}
    golds: dict[str, EmotionLabel] = {}
    transcripts: dict[str, str] = {}
    spec_by_name = {e.name: e for e in schema}

    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseFailure(f"invalid JSON: {e.msg}", line=lineno) from None
        if not isinstance(rec, dict) or "sample_id" not in rec:
            raise ParseFailure("record is not an object with a sample_id", line=lineno)
        sid = str(rec["sample_id"])

        if "stream_name" in rec:
            name = rec["stream_name"]
            spec = spec_by_name.get(name)
            if spec is None:
                raise SchemaMismatch(f"stream {name!r} (sample {sid!r}) is not in the schema")
            modality = Modality.parse(rec.get("modality", ""))
            if modality is not spec.modality:
                raise SchemaMismatch(
                    f"stream {name!r} declared {modality.value}, schema says {spec.modality.value}"
                )
            values = rec.get("values")
            declared = int(rec.get("dim", -1))
            if not isinstance(values, list):
                raise ParseFailure(f"stream {name!r} of sample {sid!r} has no values array", line=lineno)
            if declared != len(values):
                raise DimMismatch(sid, name, declared, len(values))
            if declared != spec.dim:
                raise DimMismatch(sid, name, spec.dim, declared)
            arr = np.asarray(values, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise NonFiniteValue(sid, name)
            bucket = streams.setdefault(sid, {})
            if name in bucket:
                raise DuplicateRecord(sid, name)
            bucket[name] = FeatureStream(modality, name, arr)
        elif "gold_label" in rec:
            if sid in golds:
                raise DuplicateRecord(sid, "gold_label")
            golds[sid] = EmotionLabel.parse(rec["gold_label"])
        elif "transcript" in rec:
            if sid in transcripts:
                raise DuplicateRecord(sid, "transcript")
            transcripts[sid] = str(rec["transcript"])
        else:
            raise ParseFailure(f"unrecognized record for sample {sid!r}", line=lineno)

    all_ids = sorted(set(streams) | set(golds) | set(transcripts))
    samples = []
    for sid in all_ids:
        samples.append(Sample(
            sample_id=sid,
            streams=streams.get(sid, {}),
            gold_label=golds.get(sid),
            transcript=transcripts.get(sid),
        ))
    return Dataset(schema, tuple(samples))


def infer_schema(manifest_path: str | Path) -> StreamSchema:
    """Reconstruct the stream layout a manifest file implies.

    Streams come out grouped by modality in canonical (audio, text, video)
    order; within a modality they keep first-appearance order. Conflicting
    modality or dim declarations for the same stream name are an error.
    """
    path = Path(manifest_path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise IoFailure(f"cannot read manifest {path}: {e}") from e

    seen: dict[str, tuple[Modality, int, int]] = {}  # name -> (modality, dim, order)
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseFailure(f"invalid JSON: {e.msg}", line=lineno) from None
        if not isinstance(rec, dict) or "stream_name" not in rec:
            continue
        name = str(rec["stream_name"])
        modality = Modality.parse(rec.get("modality", ""))
        values = rec.get("values")
        dim = int(rec.get("dim", len(values) if isinstance(values, list) else -1))
        if name in seen:
            prev_mod, prev_dim, _ = seen[name]
            if prev_mod is not modality or prev_dim != dim:
                raise SchemaMismatch(
                    f"stream {name!r} redeclared as {modality.value}/{dim}, "
                    f"was {prev_mod.value}/{prev_dim} (line {lineno})"
                )
        else:
            seen[name] = (modality, dim, len(seen))
    if not seen:
        raise EmptyDataset(f"no feature records in {path}")
    ordered = sorted(seen.items(), key=lambda kv: (MODALITIES.index(kv[1][0]), kv[1][2]))
    return StreamSchema(tuple(StreamSpec(mod, name, dim) for name, (mod, dim, _) in ordered))


def write_manifest(dataset: Dataset, path: str | Path) -> None:
    """Write `dataset` in the manifest format such that ingest() round-trips it."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for s in dataset:
                for spec in dataset.schema:
                    st = s.streams[spec.name]
                    rec = {
                        "sample_id": s.sample_id,
                        "modality": spec.modality.value,
                        "stream_name": spec.name,
                        "dim": spec.dim,
                        "values": st.values.tolist(),
                    }
                    fh.write(json.dumps(rec) + "\n")
                if s.gold_label is not None:
                    fh.write(json.dumps({"sample_id": s.sample_id, "gold_label": s.gold_label.value}) + "\n")
                if s.transcript is not None:
                    fh.write(json.dumps({"sample_id": s.sample_id, "transcript": s.transcript}) + "\n")
    except OSError as e:
        raise IoFailure(f"cannot write manifest {path}: {e}") from e


# --- synthetic data ----------------------------------------------------------

def synth_generate(
    n_per_class: int,
    schema: StreamSchema | None = None,
    separation: float = 4.0,
    noise_sigma: float = 1.0,
    label_noise_rate: float = 0.0,
    seed: int = 0,
) -> Dataset:
    """Generate a 6-class Gaussian-cluster dataset, one cluster per class per stream.

    Class mean vectors are mutually orthogonal directions scaled so that any
    two class means sit exactly `separation` apart in units of `noise_sigma`.
    A `label_noise_rate` fraction of gold labels (exactly round(rate*n) of
    them) is re-drawn uniformly among the five wrong classes. Sample ids
    encode the generating class ("happy_0003"), so the pre-corruption labels
    stay recoverable via synth_clean_labels(). Deterministic given the seed.
    """
    if n_per_class <= 0:
        raise InvalidConfig(f"n_per_class must be positive, got {n_per_class}")
    if separation <= 0:
        raise InvalidConfig(f"separation must be positive, got {separation}")
    if noise_sigma < 0:
        raise InvalidConfig(f"noise_sigma must be non-negative, got {noise_sigma}")
    if not 0.0 <= label_noise_rate <= 1.0:
        raise InvalidConfig(f"label_noise_rate must be in [0,1], got {label_noise_rate}")
    if schema is None:
        schema = default_schema()
    for spec in schema:
        if spec.dim < NUM_CLASSES:
            raise InvalidConfig(
                f"synthetic stream {spec.name!r} needs dim >= {NUM_CLASSES}, got {spec.dim}"
            )

    rng = np.random.default_rng(seed)
    # Orthonormal class directions per stream; pairwise mean distance is then
    # exactly scale*sqrt(2), so scale = separation*sigma/sqrt(2).
    unit = noise_sigma if noise_sigma > 0 else 1.0
    scale = separation * unit / math.sqrt(2.0)
    means: dict[str, np.ndarray] = {}
    for spec in schema:
        q, _ = np.linalg.qr(rng.standard_normal((spec.dim, NUM_CLASSES)))
        means[spec.name] = q.T * scale  # (6, dim)

    samples: list[Sample] = []
    clean: list[EmotionLabel] = []
    for label in LABELS:
        for i in range(n_per_class):
            sid = f"{label.value}_{i:04d}"
            streams = {}
            for spec in schema:
                vals = means[spec.name][label.index] + noise_sigma * rng.standard_normal(spec.dim)
                streams[spec.name] = FeatureStream(spec.modality, spec.name, vals)
            samples.append(Sample(sid, streams, gold_label=label))
            clean.append(label)

    total = len(samples)
    n_corrupt = int(round(label_noise_rate * total))
    if n_corrupt > 0:
        corrupt_idx = rng.choice(total, size=n_corrupt, replace=False)
        for j in corrupt_idx:
            wrong = int(rng.integers(NUM_CLASSES - 1))
            if wrong >= clean[j].index:
                wrong += 1
            s = samples[j]
            samples[j] = Sample(s.sample_id, s.streams, EmotionLabel.from_index(wrong), s.transcript)
    return Dataset(schema, tuple(samples))


def synth_clean_labels(dataset: Dataset) -> dict[str, EmotionLabel]:
    """Recover the pre-corruption labels a synthetic dataset's ids encode."""
    out = {}
    for s in dataset:
        token = s.sample_id.rsplit("_", 1)[0]
        out[s.sample_id] = EmotionLabel.parse(token)
    return out


# --- label files ---------------------------------------------------------------

def save_labels(labels: Dataset | Mapping[str, EmotionLabel], path: str | Path) -> None:
    """Write a JSON-Lines label file ({"sample_id", "label"} per line).

    Accepts either a ready label map or a Dataset (labeled samples only).
    """
    if isinstance(labels, Dataset):
        labels = {s.sample_id: s.gold_label for s in labels.labeled_samples()}
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for sid, lab in labels.items():
                fh.write(json.dumps({"sample_id": sid, "label": lab.value}) + "\n")
    except OSError as e:
        raise IoFailure(f"cannot write labels {path}: {e}") from e


def load_labels(path: str | Path) -> dict[str, EmotionLabel]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise IoFailure(f"cannot read labels {path}: {e}") from e
    out: dict[str, EmotionLabel] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseFailure(f"invalid JSON: {e.msg}", line=lineno) from None
        if not isinstance(rec, dict) or "sample_id" not in rec or "label" not in rec:
            raise ParseFailure("label record needs sample_id and label", line=lineno)
        sid = str(rec["sample_id"])
        if sid in out:
            raise ParseFailure(f"duplicate label for sample {sid!r}", line=lineno)
        try:
            out[sid] = EmotionLabel.parse(rec["label"])
        except ParseFailure as e:
            raise ParseFailure(str(e), line=lineno) from None
    return out
