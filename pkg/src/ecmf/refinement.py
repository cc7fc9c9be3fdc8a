"""Multi-source label refinement and the human-review queue.

Every labeled sample gets a ballot: its original label (confidence 1.0)
plus one vote per auxiliary source. A strict majority decides outright.
Otherwise the count leaders are tie-broken by summed confidence, then by
lower class index. A sample is routed to human review only when every
source disagrees with the original and no strict majority formed; it
keeps the original label provisionally until a reviewer decides.

Review decisions live in an append-only JSONL log, fsynced on every
append; replaying the log over the persisted vote records reproduces the
final state exactly.
"""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import Dataset, EmotionLabel, LABELS, Modality, Sample
from .errors import (
    AlreadyReviewed,
    DuplicateRecord,
    EmptyInput,
    InvalidConfig,
    IoFailure,
    MissingPrediction,
    NotFound,
    ParseFailure,
)
from .fusion import ModelConfig
from .training import TrainConfig, train_one

ORIGINAL_CONFIDENCE = 1.0

STATUS_AUTO = "auto"
STATUS_NEEDS_REVIEW = "needs_review"
STATUS_REVIEWED = "reviewed"
STATUSES = (STATUS_AUTO, STATUS_NEEDS_REVIEW, STATUS_REVIEWED)

KIND_WEAK = "weak_classifier"
KIND_EXTERNAL = "external_file"


@dataclass(frozen=True)
class SourceVote:
    source_id: str
    label: EmotionLabel
    confidence: float = 1.0

    def to_json(self) -> dict:
        return {
            "source_id": self.source_id,
            "label": self.label.value,
            "confidence": self.confidence,
        }

    @staticmethod
    def from_json(obj: dict) -> "SourceVote":
        return SourceVote(
            source_id=str(obj["source_id"]),
            label=EmotionLabel.parse(obj["label"]),
            confidence=float(obj.get("confidence", 1.0)),
        )


@dataclass(frozen=True)
class LabelSource:
    """One auxiliary labeler: predictions (and optional confidences) by sample id."""

    source_id: str
    labels: dict[str, EmotionLabel]
    confidences: dict[str, float] = field(default_factory=dict)
    kind: str = KIND_EXTERNAL
    modality: str | None = None

    def vote_for(self, sample_id: str) -> SourceVote:
        if sample_id not in self.labels:
            raise MissingPrediction(self.source_id, sample_id)
        return SourceVote(
            self.source_id,
            self.labels[sample_id],
            float(self.confidences.get(sample_id, 1.0)),
        )


def train_weak_classifier(
    dataset: Dataset,
    modality: Modality,
    model_config: ModelConfig,
    train_config: TrainConfig,
    predict_data: Dataset | Sequence[Sample] | None = None,
) -> LabelSource:
    """Fit a single-modality model and turn it into a voting source.

    The schema is restricted to the modality's streams (so the token sequence
    is that modality's modal token plus its streams), the model trains on the
    dataset's labeled samples, and every sample — labeled or not — gets a
    prediction with max softmax probability as its confidence.
    """
    view = dataset.restrict_to_modality(modality)
    mc = replace(model_config, schema=view.schema)
    trained, _ = train_one(view, None, mc, train_config)
    samples = (
        list(predict_data.restrict_to_modality(modality))
        if isinstance(predict_data, Dataset)
        else list(predict_data) if predict_data is not None
        else list(view)
    )
    probs = trained.predict_proba(samples)
    idx = np.argmax(probs, axis=-1)
    labels = {s.sample_id: LABELS[int(i)] for s, i in zip(samples, idx)}
    confs = {s.sample_id: float(p[i]) for s, p, i in zip(samples, probs, idx)}
    return LabelSource(
        source_id=f"weak_{modality.value}",
        labels=labels,
        confidences=confs,
        kind=KIND_WEAK,
        modality=modality.value,
    )


def load_external_source(path: str | Path, source_id: str | None = None) -> LabelSource:
    """Read a source from JSONL lines {"sample_id", "label", "confidence"?}."""
    path = Path(path)
    if source_id is None:
        source_id = path.stem
    labels: dict[str, EmotionLabel] = {}
    confs: dict[str, float] = {}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot read label source {path}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseFailure(f"invalid JSON in {path}: {e.msg}", line=lineno) from e
        if not isinstance(obj, dict) or "sample_id" not in obj or "label" not in obj:
            raise ParseFailure(f"source line needs sample_id and label in {path}", line=lineno)
        sid = str(obj["sample_id"])
        if sid in labels:
            raise ParseFailure(f"duplicate sample_id {sid!r} in {path}", line=lineno)
        labels[sid] = EmotionLabel.parse(obj["label"])
        if "confidence" in obj:
            confs[sid] = float(obj["confidence"])
    return LabelSource(source_id, labels, confs, kind=KIND_EXTERNAL)


def save_label_source(source: LabelSource, path: str | Path) -> None:
    lines = []
    for sid in sorted(source.labels):
        obj = {"sample_id": sid, "label": source.labels[sid].value}
        if sid in source.confidences:
            obj["confidence"] = source.confidences[sid]
        lines.append(json.dumps(obj))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


@dataclass(frozen=True)
class VoteRecord:
    """Outcome of refinement for one sample, persisted as the review queue entry."""

    sample_id: str
    original_label: EmotionLabel | None
    source_votes: tuple[SourceVote, ...]
    refined_label: EmotionLabel
    status: str  # auto | needs_review | reviewed
    reviewer_note: str | None = None
    transcript: str | None = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise InvalidConfig(f"unknown vote-record status {self.status!r}")

    @property
    def needs_review(self) -> bool:
        return self.status == STATUS_NEEDS_REVIEW

    def to_json(self) -> dict:
        obj = {
            "sample_id": self.sample_id,
            "original_label": self.original_label.value if self.original_label is not None else None,
            "source_votes": [v.to_json() for v in self.source_votes],
            "refined_label": self.refined_label.value,
            "status": self.status,
        }
        if self.reviewer_note is not None:
            obj["reviewer_note"] = self.reviewer_note
        if self.transcript is not None:
            obj["transcript"] = self.transcript
        return obj

    @staticmethod
    def from_json(obj: dict) -> "VoteRecord":
        orig = obj.get("original_label")
        return VoteRecord(
            sample_id=str(obj["sample_id"]),
            original_label=EmotionLabel.parse(orig) if orig is not None else None,
            source_votes=tuple(SourceVote.from_json(v) for v in obj["source_votes"]),
            refined_label=EmotionLabel.parse(obj["refined_label"]),
            status=str(obj["status"]),
            reviewer_note=obj.get("reviewer_note"),
            transcript=obj.get("transcript"),
        )


def decide(
    original: EmotionLabel | None,
    votes: Sequence[SourceVote],
    include_original: bool = True,
) -> tuple[EmotionLabel, str]:
    """Resolve one ballot; returns (label, status).

    Strict majority wins outright. Otherwise: if every source disagrees with
    the original, the sample needs review and provisionally keeps the original
    label. Otherwise the count leaders are tie-broken by summed confidence
    (the original contributes 1.0 when on the ballot), then lower class index.
    """
    ballots: list[tuple[EmotionLabel, float]] = []
    if original is not None and include_original:
        ballots.append((original, ORIGINAL_CONFIDENCE))
    ballots.extend((v.label, v.confidence) for v in votes)
    if not ballots:
        raise EmptyInput("cannot decide a label from an empty ballot")

    counts = Counter(label for label, _ in ballots)
    top_label, top_n = counts.most_common(1)[0]
    if 2 * top_n > len(ballots):
        return top_label, STATUS_AUTO

    if original is not None and votes and all(v.label != original for v in votes):
        return original, STATUS_NEEDS_REVIEW

    leaders = [lab for lab, n in counts.items() if n == top_n]
    sums = {lab: 0.0 for lab in leaders}
    for lab, conf in ballots:
        if lab in sums:
            sums[lab] += conf
    winner = max(leaders, key=lambda lab: (sums[lab], -lab.index))
    status = STATUS_AUTO if original is not None else STATUS_NEEDS_REVIEW
    return winner, status


def refine(
    dataset: Dataset,
    sources: Sequence[LabelSource],
    include_original: bool = True,
    include_unlabeled: bool = False,
) -> tuple[dict[str, EmotionLabel], list[VoteRecord]]:
    """Vote every sample's label against the sources, in sample-id order.

    Returns (refined label map, vote records). Labeled samples put their
    original label on the ballot unless include_original is off (it stays the
    review-trigger reference either way). Unlabeled samples are skipped unless
    include_unlabeled is set, in which case the sources alone vote and the
    sample is flagged for review whenever they miss a strict majority.
    """
    if len(sources) < 2:
        raise InvalidConfig(f"refinement needs at least 2 sources, got {len(sources)}")
    records: list[VoteRecord] = []
    for sample in dataset:
        if not sample.labeled and not include_unlabeled:
            continue
        votes = tuple(src.vote_for(sample.sample_id) for src in sources)
        refined, status = decide(sample.gold_label, votes, include_original)
        records.append(
            VoteRecord(
                sample_id=sample.sample_id,
                original_label=sample.gold_label,
                source_votes=votes,
                refined_label=refined,
                status=status,
                transcript=sample.transcript,
            )
        )
    return {r.sample_id: r.refined_label for r in records}, records


def refined_labels(records: Iterable[VoteRecord]) -> dict[str, EmotionLabel]:
    return {r.sample_id: r.refined_label for r in records}


# --- review log ------------------------------------------------------------------

@dataclass(frozen=True)
class ReviewDecision:
    sample_id: str
    corrected: EmotionLabel
    note: str | None = None
    timestamp: str = ""

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "corrected": self.corrected.value,
            "note": self.note,
            "timestamp": self.timestamp,
        }

    @staticmethod
    def from_json(obj: dict) -> "ReviewDecision":
        return ReviewDecision(
            sample_id=str(obj["sample_id"]),
            corrected=EmotionLabel.parse(obj["corrected"]),
            note=obj.get("note"),
            timestamp=str(obj.get("timestamp", "")),
        )


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def append_review(log_path: str | Path, decision: ReviewDecision) -> ReviewDecision:
    """Append one decision to the log and make it durable (flush + fsync)
    before returning. Returns the decision as written (timestamp filled in)."""
    if not decision.timestamp:
        decision = replace(decision, timestamp=_utc_now())
    line = json.dumps(decision.to_json())
    try:
        with Path(log_path).open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())
    except OSError as e:
        raise IoFailure(f"cannot append to review log {log_path}: {e}") from e
    return decision


def replay_log(log_path: str | Path) -> dict[str, ReviewDecision]:
    """Decisions by sample id; a missing log file means no decisions yet.
    If a sample somehow appears twice (say, a crashed client retried), the
    later line wins — the log itself stays append-only."""
    path = Path(log_path)
    if not path.exists():
        return {}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot read review log {path}: {e}") from e
    decisions: dict[str, ReviewDecision] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = ReviewDecision.from_json(json.loads(line))
        except (json.JSONDecodeError, KeyError) as e:
            raise ParseFailure(f"bad review log line in {path}: {e}", line=lineno) from e
        decisions[d.sample_id] = d
    return decisions


def _with_decision(record: VoteRecord, corrected: EmotionLabel, note: str | None) -> VoteRecord:
    return replace(record, refined_label=corrected, status=STATUS_REVIEWED, reviewer_note=note)


def apply_review(
    records: Sequence[VoteRecord],
    sample_id: str,
    corrected: EmotionLabel,
    note: str | None = None,
    log_path: str | Path | None = None,
) -> list[VoteRecord]:
    """One human decision: the record must be awaiting review; it becomes
    reviewed with the corrected label (confirming the original is fine). When
    log_path is given the decision is appended — durably — before any state
    changes hands."""
    by_id = {r.sample_id: r for r in records}
    record = by_id.get(sample_id)
    if record is None:
        raise NotFound(f"no vote record for sample {sample_id!r}")
    if record.status == STATUS_REVIEWED:
        raise AlreadyReviewed(f"sample {sample_id!r} was already reviewed")
    if record.status != STATUS_NEEDS_REVIEW:
        raise AlreadyReviewed(f"sample {sample_id!r} is not awaiting review")
    if log_path is not None:
        append_review(log_path, ReviewDecision(sample_id, corrected, note))
    return [
        _with_decision(r, corrected, note) if r.sample_id == sample_id else r
        for r in records
    ]


def apply_decisions(
    records: Sequence[VoteRecord], decisions: Mapping[str, ReviewDecision]
) -> list[VoteRecord]:
    """Replay logged decisions over vote records (bulk, no precondition checks:
    the log is the authority on what was decided). Unknown sample ids error."""
    by_id = {r.sample_id: r for r in records}
    unknown = set(decisions) - set(by_id)
    if unknown:
        raise NotFound(f"decisions for unknown samples: {sorted(unknown)}")
    return [
        _with_decision(r, d.corrected, d.note)
        if (d := decisions.get(r.sample_id)) is not None
        else r
        for r in records
    ]


def save_vote_records(records: Iterable[VoteRecord], path: str | Path) -> None:
    lines = [json.dumps(r.to_json()) for r in records]
    try:
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot write vote records {path}: {e}") from e


def load_vote_records(path: str | Path) -> list[VoteRecord]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot read vote records {path}: {e}") from e
    records = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = VoteRecord.from_json(json.loads(line))
        except (json.JSONDecodeError, KeyError) as e:
            raise ParseFailure(f"bad vote record in {path}: {e}", line=lineno) from e
        if rec.sample_id in seen:
            raise DuplicateRecord(rec.sample_id)
        seen.add(rec.sample_id)
        records.append(rec)
    return records


def review_stats(records: Sequence[VoteRecord]) -> dict[str, int]:
    by_status = Counter(r.status for r in records)
    changed = sum(
        1 for r in records
        if r.original_label is not None and r.refined_label != r.original_label
    )
    return {
        "total": len(records),
        STATUS_AUTO: by_status.get(STATUS_AUTO, 0),
        STATUS_NEEDS_REVIEW: by_status.get(STATUS_NEEDS_REVIEW, 0),
        STATUS_REVIEWED: by_status.get(STATUS_REVIEWED, 0),
        "changed_from_original": changed,
    }


def export_labels(records: Sequence[VoteRecord]) -> dict[str, EmotionLabel]:
    """Final label per sample — reviewed corrections included, provisional
    labels for anything still awaiting review."""
    return refined_labels(records)
