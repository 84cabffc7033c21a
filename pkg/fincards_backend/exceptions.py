"""
Error hierarchy for the FinCARDS backend.

Every error carries the process exit code the CLI should use when it
escapes a subcommand: 2 for validation problems, 3 for judge failures,
4 for IO problems.
"""

from typing import Any, Dict, List, Optional

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_JUDGE = 3
EXIT_IO = 4


class FinCardsError(Exception):
    """Base class for all backend errors."""

    exit_code = EXIT_VALIDATION


class ConfigError(FinCardsError, ValueError):
    """Invalid or inconsistent pipeline configuration."""


class CorpusParseError(FinCardsError, ValueError):
    """A chunk file line could not be parsed."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        super().__init__(message)
        self.line_number = line_number


class EmptyCorpusError(CorpusParseError):
    """The chunk file holds no records."""

    def __init__(self, message: str = "empty corpus"):
        super().__init__(message)


class CorpusIntegrityError(FinCardsError, ValueError):
    """Records parse but violate store invariants (duplicate ids, gaps)."""

    def __init__(self, message: str, line_numbers: Optional[List[int]] = None):
        super().__init__(message)
        self.line_numbers = line_numbers or []


class ChunkNotFoundError(FinCardsError, KeyError):
    """Unknown chunk id."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "chunk not found"


class SchemaValidationError(FinCardsError, ValueError):
    """A card or intent record failed validation."""

    def __init__(self, message: str, errors: Optional[List[Dict[str, Any]]] = None):
        super().__init__(message)
        self.errors = errors or []

    @property
    def paths(self) -> List[str]:
        return [e["path"] for e in self.errors]


class PromptPayloadError(FinCardsError, KeyError):
    """A prompt template was rendered with a missing payload field."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing payload field"


class JudgeError(FinCardsError, RuntimeError):
    """The judge could not produce an acceptable result."""

    exit_code = EXIT_JUDGE


class JudgeTransportError(JudgeError):
    """Remote judge unreachable after retries."""


class JudgeResponseError(JudgeError):
    """Remote judge kept returning schema-invalid output."""


class StageError(FinCardsError, RuntimeError):
    """A pipeline stage failed; carries the partial audit trace."""

    exit_code = EXIT_JUDGE

    def __init__(self, message: str, stage: str, trace: Any = None):
        super().__init__(message)
        self.stage = stage
        self.trace = trace


class TraceNotFoundError(FinCardsError, KeyError):
    """The requested chunk is not in the trace's final list."""

    def __init__(self, message: str, last_event_seq: Optional[int] = None):
        super().__init__(message)
        self.last_event_seq = last_event_seq

    def __str__(self) -> str:
        return str(self.args[0])


class NoRelevantJudgmentsError(FinCardsError, ValueError):
    """A query has no positive relevance grade and cannot be scored."""
