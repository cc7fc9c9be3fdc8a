"""Exception hierarchy shared across the pipeline.

Two branches matter for the CLI exit-code contract: ``ValidationFailure``
(bad inputs or configuration, exit 1) and ``RuntimeFailure`` (the pipeline
itself broke, exit 2).
"""

from __future__ import annotations


class EcmfError(Exception):
    """Base class for all pipeline errors."""


class ValidationFailure(EcmfError):
    """Input, configuration, or state validation failed (CLI exit 1)."""


class RuntimeFailure(EcmfError):
    """Runtime breakdown while executing an otherwise valid request (CLI exit 2)."""


# --- dataset / ingestion ---------------------------------------------------

class MissingStream(ValidationFailure):
    def __init__(self, sample_id: str, stream_name: str):
        super().__init__(f"sample {sample_id!r} lacks stream {stream_name!r}")
        self.sample_id = sample_id
        self.stream_name = stream_name


class DimMismatch(ValidationFailure):
    def __init__(self, sample_id: str, stream_name: str, expected: int, got: int):
        super().__init__(
            f"sample {sample_id!r} stream {stream_name!r}: expected dim {expected}, got {got}"
        )
        self.sample_id = sample_id
        self.stream_name = stream_name


class NonFiniteValue(ValidationFailure):
    def __init__(self, sample_id: str, stream_name: str):
        super().__init__(f"sample {sample_id!r} stream {stream_name!r} contains non-finite values")
        self.sample_id = sample_id
        self.stream_name = stream_name


class DuplicateRecord(ValidationFailure):
    def __init__(self, sample_id: str, stream_name: str | None = None):
        what = f"({sample_id!r}, {stream_name!r})" if stream_name else repr(sample_id)
        super().__init__(f"duplicate record for {what}")
        self.sample_id = sample_id
        self.stream_name = stream_name


class ParseFailure(ValidationFailure):
    def __init__(self, message: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line


class IoFailure(RuntimeFailure):
    pass


class InvalidConfig(ValidationFailure):
    pass


# --- preprocessing / model -------------------------------------------------

class EmptyDataset(ValidationFailure):
    pass


class SchemaMismatch(ValidationFailure):
    pass


class TooFewSamples(ValidationFailure):
    def __init__(self, label: str, have: int, need: int):
        super().__init__(f"class {label!r} has {have} labeled samples, need at least {need}")
        self.label = label


class ShapeMismatch(ValidationFailure):
    pass


# --- training --------------------------------------------------------------

class NonFiniteGradient(RuntimeFailure):
    pass


class NonFiniteLoss(RuntimeFailure):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


# --- metrics ---------------------------------------------------------------

class LengthMismatch(ValidationFailure):
    pass


class EmptyInput(ValidationFailure):
    pass


# --- label refinement / review ---------------------------------------------

class MissingPrediction(ValidationFailure):
    def __init__(self, source_id: str, sample_id: str):
        super().__init__(f"source {source_id!r} has no prediction for sample {sample_id!r}")
        self.source_id = source_id
        self.sample_id = sample_id


class NotFound(ValidationFailure):
    pass


class AlreadyReviewed(ValidationFailure):
    pass


# --- ensembling ------------------------------------------------------------

class DuplicateVariant(ValidationFailure):
    pass
