"""PGM click model tasks."""
import typing
from typing import List, Optional

import speedwagon

from speedwagon_clickgraph import harness
from speedwagon_clickgraph.config import ExperimentConfig
from speedwagon_clickgraph.evaluation import MetricsReport
from speedwagon_clickgraph.pgm_baselines import ClickModelKind
from .common import package_logging

BaselineResult = typing.TypedDict(
    "BaselineResult",
    {
        "model": str,
        "output": str,
        "reports": List[MetricsReport],
    }
)


class FitBaselineTask(speedwagon.tasks.Subtask[BaselineResult]):
    """Fit one PGM click model and optionally evaluate it."""

    name = "Fit PGM Click Model"

    def __init__(
        self,
        config: ExperimentConfig,
        kind: ClickModelKind,
        output_dir: str,
        evaluate: bool = True
    ) -> None:
        """Create a baseline task."""
        super().__init__()
        self._config = config
        self._kind = kind
        self._output_dir = output_dir
        self._evaluate = evaluate

    def task_description(self) -> Optional[str]:
        """Get user readable information about what the subtask is doing."""
        return f"Fitting {self._kind.value} on {self._config.data_dir}"

    def work(self) -> bool:
        """Fit, store and evaluate the model."""
        with package_logging(self.log):
            data = harness.prepare_data(self._config)
            harness.fit_baselines(
                self._config, [self._kind], self._output_dir, data
            )
            self.log(f"Fitted {self._kind.value}")
            reports = harness.evaluate_baselines(
                self._output_dir, [self._kind], self._config, data
            ) if self._evaluate else []
            self.set_results(
                {
                    "model": self._kind.value,
                    "output": self._output_dir,
                    "reports": reports,
                }
            )
        return True
