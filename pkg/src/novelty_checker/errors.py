"""Exception hierarchy shared across the pipeline.

Every error raised on purpose derives from :class:`NoveltyCheckerError` so
callers (CLI, service) can map failures to exit codes / HTTP statuses without
enumerating modules.
"""

from __future__ import annotations


class NoveltyCheckerError(Exception):
    """Base class for all errors raised by this package."""


# --- input validation -------------------------------------------------------

class ValidationError(NoveltyCheckerError):
    """Invalid caller-supplied data (ideas, config values, datasets)."""


class EmptyIdea(ValidationError):
    pass


class IdeaTooLong(ValidationError):
    pass


class NoIdentifier(ValidationError):
    """No usable identifier among native id / DOI / arXiv."""


class ConfigError(ValidationError):
    """Bad configuration value or unresolvable settings."""


class DatasetError(ValidationError):
    """Malformed dataset / pool / ranking file. Carries a line number when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class LengthMismatch(ValidationError):
    pass


class UnknownClass(ValidationError):
    pass


class NotEnoughExamples(ValidationError):
    pass


class EmptyText(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ZeroVector(ValidationError):
    pass


# --- provider / network -----------------------------------------------------

class ProviderError(NoveltyCheckerError):
    """Failure talking to an external provider (LLM, embeddings, search)."""


class TransientProviderError(ProviderError):
    """Retryable provider failure (timeouts, 5xx, connection resets)."""


class ProviderUnavailable(ProviderError):
    """Retries exhausted; the provider never returned a usable response."""


class AuthError(ProviderError):
    """Authentication rejected. Never retried."""


class ContextOverflow(ProviderError):
    """Request rejected by the provider for exceeding its context budget."""


class HostError(ProviderError):
    """Search host failed after retries."""


class QuotaExceeded(HostError):
    """Search host kept answering with rate-limit rejections."""


# --- pipeline stages --------------------------------------------------------

class PipelineError(NoveltyCheckerError):
    """Stage failure inside a pipeline run; tagged with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


class MalformedQueryResponse(NoveltyCheckerError):
    """Query-generation reply held no parseable JSON object, even after repair."""


class EmptyPool(NoveltyCheckerError):
    """No candidate papers survived retrieval for this idea."""


class UnparseableRanking(NoveltyCheckerError):
    """Listwise reranker reply contained no valid index at all."""


class UnparseableVerdict(NoveltyCheckerError):
    """Judge reply held no decision, even after the repair round-trip.

    Deliberately a hard error: a failed parse must never silently become a
    novel / not-novel label.
    """
