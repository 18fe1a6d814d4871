"""Exception hierarchy.

Every domain error carries a stable ``code`` that the command line prints
to standard error, so scripts can match on it.
"""

from __future__ import annotations

from datetime import datetime


class RepoDomainError(Exception):
    code = "E_DOMAIN"


# ingestion
class NotFound(RepoDomainError):
    code = "E_NOT_FOUND"


class RateLimited(RepoDomainError):
    code = "E_RATE_LIMITED"

    def __init__(self, message: str, reset_at: datetime):
        super().__init__(message)
        self.reset_at = reset_at


class AuthFailed(RepoDomainError):
    code = "E_AUTH"


class TransportError(RepoDomainError):
    code = "E_TRANSPORT"


class TruncatedHistory(RepoDomainError):
    """Commit pagination aborted; ``partial`` holds what was received."""

    code = "E_TRUNCATED"

    def __init__(self, message: str, partial: list | None = None):
        super().__init__(message)
        self.partial = partial or []


class IoError(RepoDomainError):
    code = "E_IO"


class CorruptCache(RepoDomainError):
    code = "E_CORRUPT_CACHE"


# datasets and models
class SchemaMismatch(RepoDomainError):
    code = "E_SCHEMA"


class ChecksumMismatch(RepoDomainError):
    code = "E_CHECKSUM"


class EmptyDataset(RepoDomainError):
    code = "E_EMPTY_DATASET"


class MissingEmbedding(RepoDomainError):
    code = "E_MISSING_EMBEDDING"

    def __init__(self, ref: str):
        super().__init__(f"no embedding for {ref}")
        self.ref = ref


class EmptyVocabulary(RepoDomainError):
    code = "E_EMPTY_VOCAB"


class DegenerateLabels(RepoDomainError):
    code = "E_DEGENERATE_LABELS"


class TooFewSamples(RepoDomainError):
    code = "E_TOO_FEW_SAMPLES"

    def __init__(self, label: str, count: int):
        super().__init__(f"class {label!r} has {count} sample(s); SMOTE needs at least 2")
        self.label = label
        self.count = count


class NonFiniteInput(RepoDomainError):
    code = "E_NON_FINITE"


class BudgetTooSmall(RepoDomainError):
    code = "E_BUDGET"


class EmptyMatrix(RepoDomainError):
    code = "E_EMPTY_MATRIX"


# statistics
class DegenerateTable(RepoDomainError):
    code = "E_DEGENERATE_TABLE"


class EmptySample(RepoDomainError):
    code = "E_EMPTY_SAMPLE"


class TooFewPoints(RepoDomainError):
    code = "E_TOO_FEW_POINTS"
