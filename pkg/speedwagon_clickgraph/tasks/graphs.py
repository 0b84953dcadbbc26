"""Graph construction task."""
import typing
from typing import List, Optional

import speedwagon

from speedwagon_clickgraph import harness
from speedwagon_clickgraph.config import ExperimentConfig
from speedwagon_clickgraph.graph_builder import GraphSummary, summarize_graph
from .common import package_logging

GraphReport = typing.TypedDict(
    "GraphReport",
    {
        "data_dir": str,
        "files": List[str],
        "summaries": List[GraphSummary],
    }
)


class BuildGraphsTask(speedwagon.tasks.Subtask[GraphReport]):
    """Build the query and document graphs of a training partition."""

    name = "Build Click Graphs"

    def __init__(self, config: ExperimentConfig, output_dir: str) -> None:
        """Create a graph building task."""
        super().__init__()
        self._config = config
        self._output_dir = output_dir

    def task_description(self) -> Optional[str]:
        """Get user readable information about what the subtask is doing."""
        return f"Building graphs from {self._config.data_dir}"

    def work(self) -> bool:
        """Build and store both graphs."""
        with package_logging(self.log):
            data = harness.prepare_data(self._config.replace(graph_dir=""))
            files = harness.write_graphs(data, self._output_dir)
            for path in files:
                self.log(f"Wrote {path}")
            self.set_results(
                {
                    "data_dir": self._config.data_dir,
                    "files": files,
                    "summaries": [
                        summarize_graph(data.query_graph),
                        summarize_graph(data.doc_graph),
                    ],
                }
            )
        return True
