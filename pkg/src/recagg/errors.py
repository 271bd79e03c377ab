"""Shared exception types for the recagg library."""


class RecaggError(Exception):
    """Base class for all library errors."""


class ConfigError(RecaggError):
    """Invalid configuration value or combination."""


class EmptyTrace(RecaggError):
    """A trace has no reasoning content to extract a tail from."""


class PromptOverflow(RecaggError):
    """An aggregation prompt exceeded the configured maximum length."""


class StageError(RecaggError):
    """A whole aggregation stage failed; carries any partial traces."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial if partial is not None else []


class LedgerError(RecaggError):
    """Token ledger used while a stage record is still open."""


class DegenerateGroup(RecaggError):
    """A rollout group whose rewards admit no advantage estimate."""


class OversizedRollout(RecaggError):
    """A single rollout exceeds the per-microbatch token budget."""


class Oversized(RecaggError):
    """A single example exceeds the packing window."""


class InvalidPool(RecaggError):
    """Calibrator pool is empty or all-zero weighted."""


class InvalidToken(RecaggError):
    """A token id is outside the configured vocabulary."""


class InvalidDistribution(RecaggError):
    """A probability vector is empty, negative, or not normalized."""


class Unsupported(RecaggError):
    """The backend does not supply data required by this operation."""


class ParseError(RecaggError):
    """Malformed conversation or record (e.g. unbalanced think delimiters)."""


class BackendError(RecaggError):
    """Base class for backend failures."""

    retryable = False


class TransportError(BackendError):
    """Connection-level failure talking to an inference endpoint."""

    retryable = True


class TimeoutError_(BackendError):
    """The request exceeded its deadline."""

    retryable = True


class HttpStatusError(BackendError):
    """Non-success HTTP status from the endpoint."""

    def __init__(self, status, body=""):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status
        self.retryable = status == 429 or 500 <= status <= 599


class MalformedResponse(BackendError):
    """Endpoint returned a body the client cannot interpret."""

    retryable = False


class ReplayMiss(BackendError):
    """No recorded result for this request in the replay store."""

    retryable = False
