"""Tasks for reading and splitting session logs."""
import typing
from typing import List, Optional, Tuple

import speedwagon

from speedwagon_clickgraph import session_log
from .common import package_logging

LogDescription = typing.TypedDict(
    "LogDescription",
    {
        "source": str,
        "statistics": session_log.LogStatistics,
        "sparsity": float,
    }
)

SplitResult = typing.TypedDict(
    "SplitResult",
    {
        "source": str,
        "files": List[str],
        "sizes": Tuple[int, int, int],
    }
)


class DescribeLogTask(speedwagon.tasks.Subtask[LogDescription]):
    """Validate a session log and collect its statistics."""

    name = "Describe Click Log"

    def __init__(self, log_file: str) -> None:
        """Create a task for the given log file."""
        super().__init__()
        self._log_file = log_file

    def task_description(self) -> Optional[str]:
        """Get user readable information about what the subtask is doing."""
        return f"Reading {self._log_file}"

    def work(self) -> bool:
        """Parse the log and summarize it."""
        with package_logging(self.log):
            with open(self._log_file, "r", encoding="utf-8") as read_file:
                sessions = session_log.parse_log(read_file)
            statistics = session_log.describe_log(sessions)
            self.log(
                f"{statistics.sessions} sessions with "
                f"{statistics.impressions} impressions"
            )
            self.set_results(
                {
                    "source": self._log_file,
                    "statistics": statistics,
                    "sparsity": session_log.sparsity_ratio(sessions),
                }
            )
        return True


class SplitLogTask(speedwagon.tasks.Subtask[SplitResult]):
    """Divide a log 8:1:1 into train, valid and test files."""

    name = "Split Click Log"

    def __init__(self, log_file: str, output_dir: str, seed: int) -> None:
        """Create a split task."""
        super().__init__()
        self._log_file = log_file
        self._output_dir = output_dir
        self._seed = seed

    def task_description(self) -> Optional[str]:
        """Get user readable information about what the subtask is doing."""
        return f"Splitting {self._log_file} into {self._output_dir}"

    def work(self) -> bool:
        """Write the split files."""
        with package_logging(self.log):
            vocabularies = session_log.LogVocabularies()
            with open(self._log_file, "r", encoding="utf-8") as read_file:
                sessions = session_log.parse_log(read_file, vocabularies)
            split = session_log.split_dataset(
                sessions, (8, 1, 1), seed=self._seed
            )
            files = session_log.write_split(
                split, vocabularies, self._output_dir
            )
            for path in files:
                self.log(f"Wrote {path}")
            self.set_results(
                {
                    "source": self._log_file,
                    "files": files,
                    "sizes": split.sizes,
                }
            )
        return True
