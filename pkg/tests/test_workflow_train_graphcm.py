from unittest.mock import Mock

import pytest
import speedwagon

from speedwagon_clickgraph import harness, tasks, workflow_train_graphcm
from speedwagon_clickgraph.config import ExperimentConfig


class TestTrainGraphCMWorkflow:
    @pytest.fixture
    def workflow(self):
        return workflow_train_graphcm.TrainGraphCMWorkflow()

    @pytest.fixture
    def user_args(self, workflow):
        options = {data.label: data.value for data in workflow.job_options()}
        options.update({"Input": "split", "Output": "run"})
        return options

    def test_defaults(self, user_args):
        assert user_args["Grid Search"] is False
        assert not user_args["Settings File"]

    def test_discover_without_settings_file(self, workflow, user_args):
        jobs = workflow.discover_task_metadata([], {}, user_args)
        assert jobs == [
            {
                "config": ExperimentConfig(data_dir="split", run_dir="run"),
                "grid": False,
            }
        ]

    def test_settings_file(self, workflow, user_args, tmp_path):
        settings = tmp_path / "settings.yml"
        settings.write_text("k: 4\ndata_dir: elsewhere\n")
        user_args["Settings File"] = str(settings)
        config = workflow.discover_task_metadata([], {}, user_args)[0][
            "config"
        ]
        assert config.k == 4
        assert config.data_dir == "split"

    def test_invalid_settings_file(self, workflow, user_args, tmp_path):
        settings = tmp_path / "settings.yml"
        settings.write_text("k: 0\n")
        user_args["Settings File"] = str(settings)
        with pytest.raises(speedwagon.JobCancelled):
            workflow.discover_task_metadata([], {}, user_args)

    def test_create_new_task(self, workflow):
        task_builder = Mock()
        workflow.create_new_task(
            task_builder, {"config": ExperimentConfig(), "grid": True}
        )
        task = task_builder.add_subtask.call_args[0][0]
        assert isinstance(task, tasks.TrainModelTask)

    def test_generate_report(self, workflow, user_args):
        results = [
            speedwagon.tasks.Result(
                source=tasks.TrainModelTask,
                data={
                    "run_dir": "run",
                    "checkpoint": "run/best.clkg",
                    "best_epoch": 2,
                    "best_valid_perplexity": 1.3,
                    "epochs": [
                        harness.EpochRecord(1, 0.5, 1.4),
                        harness.EpochRecord(2, 0.4, 1.3),
                    ],
                    "grid": [({"lr": 0.01}, 1.3)],
                }
            )
        ]
        message = workflow.generate_report(results, user_args)
        assert "lr=0.01: validation PPL 1.3000" in message
        assert "Epoch 1: train loss 0.5000, validation PPL 1.4000" in message
        assert "Best epoch 2 with validation PPL 1.3000" in message
        assert "Checkpoint: run/best.clkg" in message
