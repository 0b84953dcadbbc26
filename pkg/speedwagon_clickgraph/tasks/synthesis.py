"""Synthetic log generation task."""
import typing
from typing import Optional

import speedwagon

from speedwagon_clickgraph import harness
from speedwagon_clickgraph.synthetic import GeneratorSettings
from .common import package_logging

SyntheticLogResult = typing.TypedDict(
    "SyntheticLogResult",
    {
        "output": str,
        "kind": str,
        "sessions": int,
        "split": bool,
    }
)


class GenerateSyntheticLogTask(
    speedwagon.tasks.Subtask[SyntheticLogResult]
):
    """Sample a log and its ground truth from a known click model."""

    name = "Generate Synthetic Click Log"

    def __init__(
        self,
        generator: GeneratorSettings,
        output_dir: str,
        split_seed: Optional[int] = None
    ) -> None:
        """Create a generation task."""
        super().__init__()
        self._generator = generator
        self._output_dir = output_dir
        self._split_seed = split_seed

    def task_description(self) -> Optional[str]:
        """Get user readable information about what the subtask is doing."""
        return (
            f"Generating {self._generator.sessions} "
            f"{self._generator.kind.value} "
            f"sessions"
        )

    def work(self) -> bool:
        """Write the log, its ground truth and optionally its split."""
        with package_logging(self.log):
            log = harness.synthesize(
                self._generator, self._output_dir, self._split_seed
            )
            self.log(f"Wrote {len(log.sessions)} sessions to "
                     f"{self._output_dir}")
            self.set_results(
                {
                    "output": self._output_dir,
                    "kind": self._generator.kind.value,
                    "sessions": len(log.sessions),
                    "split": self._split_seed is not None,
                }
            )
        return True
