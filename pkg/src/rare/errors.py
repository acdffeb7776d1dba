"""Exception hierarchy shared across the package."""


class RareError(Exception):
    """Base class for all package errors."""


class ValidationError(RareError):
    """A domain object violates one of its invariants."""


class DatasetError(RareError):
    """A dataset file is unreadable or contains a malformed record."""

    def __init__(self, message: str, line_no: int | None = None):
        super().__init__(message if line_no is None else f"line {line_no}: {message}")
        self.line_no = line_no


class LmBackendError(RareError):
    """Base class for language-model backend failures."""


class TransportError(LmBackendError):
    """Endpoint unreachable after bounded retries."""


class MalformedReplyError(LmBackendError):
    """Endpoint replied with a body the client cannot interpret."""


class ScriptMissError(LmBackendError):
    """The scripted backend has no entry matching a prompt."""


class CorpusError(RareError):
    """Corpus or index construction failure (duplicate ids, empty corpus)."""


class NoViableChildError(RareError):
    """Every sampled outcome for an action was discarded as unparseable."""


class NoCandidatesError(RareError):
    """A full search produced no terminal trajectory."""


class AbstainError(RareError):
    """A baseline produced no parseable answer; scored as incorrect."""
