"""Exception hierarchy shared by the library and the CLI."""

from __future__ import annotations


class QclpError(Exception):
    """Base class for every error raised on purpose by qclp."""


class InputError(QclpError):
    """A corpus, vocabulary or artifact file is missing or malformed."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None, field: str | None = None):
        super().__init__(message)
        self.path = path
        self.line = line
        self.field = field


class ConfigError(QclpError):
    """Invalid configuration or command-line usage."""


class InfeasibleError(QclpError):
    """A sampling request asks for more items than exist."""


class TransportError(QclpError):
    """An LLM or embedding endpoint could not be reached after all retries."""


class FixtureMissingError(QclpError):
    """Fixture-only mode hit a cache miss; no network call was attempted."""

    def __init__(self, key: str, what: str):
        super().__init__(f"fixture missing for {what} (cache key {key})")
        self.key = key


class DivergenceError(QclpError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class MissingFileError(InputError):
    """A required input file does not exist."""
