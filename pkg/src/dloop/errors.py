"""Exception hierarchy shared across the package.

Every error carries a stable machine ``code`` so the HTTP layer can map it
into its error envelope without string-matching messages.
"""

from __future__ import annotations


class DloopError(Exception):
    """Base class for all package errors."""

    code = "error"

    def __init__(self, message: str, details: dict | None = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


# --- graph-core ---------------------------------------------------------

class DuplicateId(DloopError):
    code = "duplicate_id"


class UnknownId(DloopError):
    code = "unknown_id"


class SelfLoop(DloopError):
    code = "self_loop"


class DuplicateEdge(DloopError):
    code = "duplicate_edge"


class CycleDetected(DloopError):
    code = "cycle_detected"


# --- prompt-engine ------------------------------------------------------

class MissingPlaceholder(DloopError):
    code = "missing_placeholder"

    def __init__(self, field: str):
        super().__init__(f"prompt context field '{field}' is required by this template", {"field": field})
        self.field = field


class EmptyGoal(DloopError):
    code = "empty_goal"


class EmptyContent(DloopError):
    code = "empty_content"


class UnknownTemplate(DloopError):
    code = "unknown_template"


# --- model-output validation (retryable envelope failures) ---------------

class EnvelopeError(DloopError):
    """A model reply that failed structural validation; eligible for repair retry."""

    code = "invalid_envelope"


class SchemaError(EnvelopeError):
    code = "schema_error"


class UnparseableLabel(EnvelopeError):
    code = "unparseable_label"


class InvalidChain(EnvelopeError):
    code = "invalid_chain"


class StepListError(EnvelopeError):
    code = "step_list_error"


# --- exemplar-store -----------------------------------------------------

class ProviderError(DloopError):
    code = "provider_error"


# --- llm-gateway --------------------------------------------------------

class GatewayError(DloopError):
    code = "gateway_error"


class GatewayTimeout(GatewayError):
    code = "timeout"


class TransportError(GatewayError):
    code = "transport_error"


class RateLimited(GatewayError):
    code = "rate_limited"


class MissingFixture(GatewayError):
    code = "missing_fixture"

    def __init__(self, request_hash: str):
        super().__init__(
            f"no recorded response for request hash {request_hash}; "
            "re-record the transcript with this flow to add it",
            {"request_hash": request_hash},
        )
        self.request_hash = request_hash


class ValidationExhausted(GatewayError):
    code = "validation_exhausted"

    def __init__(self, raw_text: str, last_error: Exception):
        super().__init__(
            f"model output failed validation after retries: {last_error}",
            {"raw_text": raw_text, "last_error": str(last_error)},
        )
        self.raw_text = raw_text
        self.last_error = last_error


# --- orchestrator -------------------------------------------------------

class IncompleteContext(DloopError):
    code = "incomplete_context"


class InvalidState(DloopError):
    code = "invalid_state"


class LastNode(DloopError):
    code = "last_node"


class NotCompleted(DloopError):
    code = "not_completed"


class ReorderRejected(DloopError):
    code = "reorder_rejected"


# --- session-store ------------------------------------------------------

class IoError(DloopError):
    code = "io_error"


class SchemaVersionUnsupported(DloopError):
    code = "schema_version_unsupported"


class CorruptSession(DloopError):
    code = "corrupt_session"

    def __init__(self, violations: list):
        super().__init__(
            "session failed validation on load: " + "; ".join(str(v) for v in violations),
            {"violations": [str(v) for v in violations]},
        )
        self.violations = violations


# --- assessment ---------------------------------------------------------

class RangeError(DloopError):
    code = "range_error"
