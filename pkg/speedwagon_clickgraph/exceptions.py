"""Exceptions raised by the click model toolkit."""
from __future__ import annotations

from typing import Any, List, Optional, Sequence, Tuple, NamedTuple

from speedwagon.exceptions import SpeedwagonException

__all__ = [
    "ClickGraphException",
    "LogLineProblem",
    "LogFormatError",
    "SplitError",
    "GraphFormatError",
    "ShapeError",
    "ConfigurationError",
    "TrainingDiverged",
    "UnsupportedCombination",
    "CheckpointFormatError",
]


class ClickGraphException(SpeedwagonException):
    """Base class for every error raised by speedwagon_clickgraph."""


class LogLineProblem(NamedTuple):
    """A single problem found while reading a session log."""

    line_number: int
    message: str

    def __str__(self) -> str:
        """Render as ``line N: message``."""
        return f"line {self.line_number}: {self.message}"


class LogFormatError(ClickGraphException):
    """Session log contains lines that do not match the canonical format."""

    def __init__(
        self,
        problems: Sequence[LogLineProblem],
        *args: Any
    ) -> None:
        """Create a new error from the problems located.

        Args:
            problems: every rejected line with the reason it was rejected.
        """
        self.problems: List[LogLineProblem] = list(problems)
        summary = "\n".join(str(problem) for problem in self.problems)
        super().__init__(
            f"{len(self.problems)} malformed line(s) in session log\n"
            f"{summary}",
            *args
        )

    @property
    def line_numbers(self) -> List[int]:
        """Line numbers of the rejected lines."""
        return [problem.line_number for problem in self.problems]


class SplitError(ClickGraphException):
    """Dataset can not be split as requested."""


class GraphFormatError(ClickGraphException):
    """Serialized graph file is not readable."""


class ShapeError(ClickGraphException, ValueError):
    """Operands of a differentiable operation have incompatible shapes."""

    def __init__(
        self,
        operation: str,
        left: Tuple[int, ...],
        right: Tuple[int, ...]
    ) -> None:
        """Create the error naming both offending shapes."""
        super().__init__(
            f"{operation}: incompatible shapes {tuple(left)} "
            f"and {tuple(right)}"
        )
        self.operation = operation
        self.left = tuple(left)
        self.right = tuple(right)


class ConfigurationError(ClickGraphException):
    """Experiment configuration is invalid."""


class TrainingDiverged(ClickGraphException):
    """Training loss became NaN or infinite."""

    def __init__(
        self,
        epoch: int,
        last_good_checkpoint: Optional[str],
        *args: Any
    ) -> None:
        """Create the error with the epoch it happened in."""
        location = last_good_checkpoint or "no checkpoint was written"
        super().__init__(
            f"Training diverged during epoch {epoch}. "
            f"Last good checkpoint: {location}",
            *args
        )
        self.epoch = epoch
        self.last_good_checkpoint = last_good_checkpoint


class UnsupportedCombination(ClickGraphException):
    """Requested operation does not apply to the combination function."""


class CheckpointFormatError(ClickGraphException):
    """Checkpoint file is not readable."""
