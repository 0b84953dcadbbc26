from unittest.mock import Mock

import pytest
import speedwagon

from speedwagon_clickgraph import tasks, workflow_pgm_baselines
from speedwagon_clickgraph.config import ExperimentConfig
from speedwagon_clickgraph.pgm_baselines import ClickModelKind


class TestFitPgmClickModelsWorkflow:
    @pytest.fixture
    def workflow(self):
        return workflow_pgm_baselines.FitPgmClickModelsWorkflow()

    @pytest.fixture
    def user_args(self, workflow):
        options = {data.label: data.value for data in workflow.job_options()}
        options.update({"Input": "split", "Output": "baselines"})
        return options

    def test_every_model_selected_by_default(self, workflow, user_args):
        jobs = workflow.discover_task_metadata([], {}, user_args)
        assert [job["model"] for job in jobs] == ["PBM", "UBM", "DCM", "SDBN"]
        assert all(job["evaluate"] for job in jobs)

    def test_no_model_selected(self, workflow, user_args):
        for kind in ClickModelKind:
            user_args[kind.value] = False
        with pytest.raises(speedwagon.JobCancelled):
            workflow.discover_task_metadata([], {}, user_args)

    def test_create_new_task(self, workflow):
        task_builder = Mock()
        workflow.create_new_task(
            task_builder,
            {
                "config": ExperimentConfig(),
                "model": "DCM",
                "output_dir": "baselines",
                "evaluate": False,
            }
        )
        task = task_builder.add_subtask.call_args[0][0]
        assert isinstance(task, tasks.FitBaselineTask)

    def _result(self, model, reports):
        return speedwagon.tasks.Result(
            source=tasks.FitBaselineTask,
            data={"model": model, "output": "baselines", "reports": reports}
        )

    def test_completion_task_without_reports(self, workflow, user_args):
        task_builder = Mock()
        workflow.completion_task(
            task_builder, [self._result("PBM", [])], user_args
        )
        assert task_builder.add_subtask.called is False

    def test_completion_task_with_reports(
            self, workflow, user_args, make_report):
        task_builder = Mock()
        workflow.completion_task(
            task_builder,
            [self._result("PBM", [make_report("PBM Full")])],
            user_args
        )
        task = task_builder.add_subtask.call_args[0][0]
        assert isinstance(task, tasks.WriteMetricsReportTask)

    def test_generate_report(self, workflow, user_args, make_report):
        results = [
            self._result("SDBN", [make_report("SDBN Full")]),
            self._result("PBM", [make_report("PBM Full")]),
        ]
        message = workflow.generate_report(results, user_args)
        assert "Fitted SDBN, PBM into baselines" in message
        assert message.index("PBM Full") < message.index("SDBN Full")
