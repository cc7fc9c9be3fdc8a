"""HTTP review service over a persisted vote-record queue.

The queue file is read once at startup and never rewritten; every human
decision is appended to the review log and fsynced before the response
is sent, so an acknowledged review survives a crash. State on restart is
exactly (queue file) + (replayed log). A process-wide lock serializes
writes — the service is a single-writer front end for one log file.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException, Query
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, field_validator

from .dataset import EmotionLabel, LABELS
from .errors import AlreadyReviewed, IoFailure, NotFound, ParseFailure
from .refinement import (
    STATUS_NEEDS_REVIEW,
    VoteRecord,
    apply_decisions,
    apply_review,
    load_vote_records,
    replay_log,
    review_stats,
)

Status = Literal["needs_review", "reviewed", "auto", "all"]


class VoteModel(BaseModel):
    source_id: str
    label: str
    confidence: float


class DecisionModel(BaseModel):
    sample_id: str
    corrected: str
    note: str | None = None
    timestamp: str


class QueueItemModel(BaseModel):
    sample_id: str
    status: str
    original_label: str | None
    refined_label: str
    reviewer_note: str | None = None
    source_votes: list[VoteModel]


class QueuePageModel(BaseModel):
    items: list[QueueItemModel]
    total: int
    offset: int
    limit: int


class SampleDetailModel(QueueItemModel):
    transcript: str | None = None
    decision: DecisionModel | None = None


class LabelRequest(BaseModel):
    label: str
    note: str | None = None

    @field_validator("label")
    @classmethod
    def _valid_label(cls, v: str) -> str:
        try:
            EmotionLabel.parse(v)
        except ParseFailure as e:
            raise ValueError(str(e)) from None  # pydantic turns this into a 422
        return v


class StatsModel(BaseModel):
    total: int
    auto: int
    needs_review: int
    reviewed: int
    changed_from_original: int


class ReviewStore:
    """In-memory view: the queue file with the decision log replayed over it."""

    def __init__(self, queue_path: str | Path, log_path: str | Path):
        self.log_path = Path(log_path)
        records = sorted(load_vote_records(queue_path), key=lambda r: r.sample_id)
        self.decisions = replay_log(self.log_path)
        self.records = apply_decisions(records, self.decisions)
        self.lock = threading.Lock()

    def find(self, sample_id: str) -> VoteRecord | None:
        for r in self.records:
            if r.sample_id == sample_id:
                return r
        return None


def _item(record: VoteRecord) -> QueueItemModel:
    return QueueItemModel(
        sample_id=record.sample_id,
        status=record.status,
        original_label=record.original_label.value if record.original_label is not None else None,
        refined_label=record.refined_label.value,
        reviewer_note=record.reviewer_note,
        source_votes=[
            VoteModel(source_id=v.source_id, label=v.label.value, confidence=v.confidence)
            for v in record.source_votes
        ],
    )


def _detail(store: ReviewStore, record: VoteRecord) -> SampleDetailModel:
    d = store.decisions.get(record.sample_id)
    return SampleDetailModel(
        **_item(record).model_dump(),
        transcript=record.transcript,
        decision=DecisionModel(**d.to_json()) if d is not None else None,
    )


def create_app(
    queue_path: str | Path,
    log_path: str | Path,
    static_dir: str | Path | None = None,
) -> FastAPI:
    store = ReviewStore(queue_path, log_path)
    app = FastAPI(title="label review service", docs_url="/api/docs", openapi_url="/api/openapi.json")
    app.state.store = store

    @app.get("/api/queue", response_model=QueuePageModel)
    def queue(
        status: Status = "needs_review",
        offset: int = Query(0, ge=0),
        limit: int = Query(50, ge=1, le=500),
    ) -> QueuePageModel:
        with store.lock:
            matched = (
                store.records if status == "all"
                else [r for r in store.records if r.status == status]
            )
            return QueuePageModel(
                items=[_item(r) for r in matched[offset : offset + limit]],
                total=len(matched),
                offset=offset,
                limit=limit,
            )

    @app.get("/api/sample/{sample_id}", response_model=SampleDetailModel)
    def sample(sample_id: str) -> SampleDetailModel:
        with store.lock:
            record = store.find(sample_id)
            if record is None:
                raise HTTPException(404, f"no such sample: {sample_id}")
            return _detail(store, record)

    @app.post("/api/sample/{sample_id}/label", response_model=SampleDetailModel)
    def label(sample_id: str, body: LabelRequest) -> SampleDetailModel:
        corrected = EmotionLabel.parse(body.label)
        with store.lock:
            try:
                # apply_review appends to the log (flush + fsync) before the
                # in-memory state below is replaced, so a 200 implies durability.
                updated = apply_review(
                    store.records, sample_id, corrected, body.note, log_path=store.log_path
                )
            except NotFound as e:
                raise HTTPException(404, str(e)) from e
            except AlreadyReviewed as e:
                raise HTTPException(409, str(e)) from e
            except IoFailure as e:
                raise HTTPException(500, str(e)) from e
            store.records = updated
            store.decisions = replay_log(store.log_path)
            return _detail(store, store.find(sample_id))

    @app.get("/api/stats", response_model=StatsModel)
    def stats() -> StatsModel:
        with store.lock:
            return StatsModel(**review_stats(store.records))

    @app.get("/api/labels")
    def labels() -> list[str]:
        return [lab.value for lab in LABELS]

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
