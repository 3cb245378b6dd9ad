"""Exception hierarchy for the collapse simulator."""

from dataclasses import dataclass


class PhotonCollapseError(Exception):
    """Base class for all simulator errors."""


class BasisTooLargeError(PhotonCollapseError, ValueError):
    """Raised when a truncated Fock basis would exceed the configured size limit."""


class NormalizationError(PhotonCollapseError, ValueError):
    """Raised when a state is not normalized where a unit norm is required."""


class IntegrationError(PhotonCollapseError, RuntimeError):
    """Raised when a master-equation integration leaves its tolerance envelope."""

    def __init__(self, message: str, result: object | None = None) -> None:
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class ConfigIssue:
    """A single validation problem, addressed by its dotted key path."""

    path: str
    message: str
    line: int | None = None
    column: int | None = None

    def __str__(self) -> str:
        location = ""
        if self.line is not None:
            location = f" (line {self.line}, column {self.column})"
        return f"{self.path}: {self.message}{location}"


class ConfigError(PhotonCollapseError, ValueError):
    """Raised when an experiment configuration fails to parse or validate."""

    def __init__(self, issues: list[ConfigIssue]) -> None:
        self.issues = list(issues)
        summary = "; ".join(str(issue) for issue in self.issues)
        super().__init__(f"{len(self.issues)} configuration error(s): {summary}")
