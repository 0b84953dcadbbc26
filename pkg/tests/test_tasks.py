from unittest.mock import Mock

import pytest

from speedwagon_clickgraph import harness, tasks
from speedwagon_clickgraph.config import ExperimentConfig
from speedwagon_clickgraph.exceptions import (
    LogFormatError,
    UnsupportedCombination,
)
from speedwagon_clickgraph.pgm_baselines import ClickModelKind
from speedwagon_clickgraph.session_log import SPLIT_FILE_NAMES
from speedwagon_clickgraph.synthetic import GeneratorKind, GeneratorSettings


@pytest.fixture
def log_file(tmp_path, make_line):
    path = tmp_path / "log.jsonl"
    path.write_text(
        "\n".join(
            make_line(f"s{n}", [(f"q{n % 3}", [("d1", n % 2), ("d2", 0)])])
            for n in range(20)
        ) + "\n"
    )
    return str(path)


def test_describe_log_task(log_file):
    task = tasks.DescribeLogTask(log_file)
    task.log = Mock()
    assert task.work() is True
    assert task.results["source"] == log_file
    assert task.results["statistics"].sessions == 20
    assert task.results["statistics"].distinct_queries == 3
    assert 0 < task.results["sparsity"] <= 1


def test_describe_log_task_malformed(tmp_path):
    path = tmp_path / "broken.jsonl"
    path.write_text('{"sid": "s1"}\n')
    task = tasks.DescribeLogTask(str(path))
    task.log = Mock()
    with pytest.raises(LogFormatError):
        task.work()


def test_split_log_task(log_file, tmp_path):
    output = tmp_path / "split"
    task = tasks.SplitLogTask(log_file, str(output), seed=4)
    task.log = Mock()
    assert task.work() is True
    assert task.results["sizes"] == (16, 2, 2)
    for file_name in SPLIT_FILE_NAMES:
        assert (output / file_name).exists()


def test_generate_synthetic_log_task(tmp_path):
    generator = GeneratorSettings(
        kind=GeneratorKind.UBM, sessions=15, n_queries=3, n_docs=9
    )
    task = tasks.GenerateSyntheticLogTask(
        generator, str(tmp_path), split_seed=1
    )
    task.log = Mock()
    assert task.work() is True
    assert task.results == {
        "output": str(tmp_path),
        "kind": "UBM",
        "sessions": 15,
        "split": True,
    }


def test_build_graphs_task_ignores_stored_graphs(monkeypatch, tmp_path):
    data = Mock(query_graph=Mock(), doc_graph=Mock())
    prepare_data = Mock(return_value=data)
    monkeypatch.setattr(harness, "prepare_data", prepare_data)
    monkeypatch.setattr(
        harness, "write_graphs", Mock(return_value=["q.txt", "d.txt"])
    )
    monkeypatch.setattr(
        tasks.graphs, "summarize_graph", lambda graph: "summary"
    )
    config = ExperimentConfig(data_dir="split", graph_dir="old")
    task = tasks.BuildGraphsTask(config, str(tmp_path))
    task.log = Mock()
    assert task.work() is True
    assert prepare_data.call_args[0][0].graph_dir == ""
    assert task.results["files"] == ["q.txt", "d.txt"]
    assert task.results["summaries"] == ["summary", "summary"]


class TestTrainModelTask:
    @pytest.fixture
    def training_result(self):
        return harness.TrainingResult(
            model=Mock(),
            run_dir="run",
            checkpoint_path="run/best.clkg",
            epochs=[harness.EpochRecord(1, 0.5, 1.2)],
            best_epoch=1,
            best_valid_perplexity=1.2,
        )

    def test_single_run(self, monkeypatch, training_result):
        monkeypatch.setattr(
            harness, "train", Mock(return_value=training_result)
        )
        task = tasks.TrainModelTask(ExperimentConfig())
        task.log = Mock()
        assert task.work() is True
        assert task.results["checkpoint"] == "run/best.clkg"
        assert task.results["grid"] == []

    def test_grid(self, monkeypatch, training_result):
        rows = [({"lr": 0.1}, 1.2)]
        monkeypatch.setattr(
            harness,
            "grid_search",
            Mock(
                return_value=harness.GridSearchResult(
                    best_config=ExperimentConfig(),
                    best_result=training_result,
                    rows=rows,
                )
            )
        )
        task = tasks.TrainModelTask(ExperimentConfig(), grid=True)
        task.log = Mock()
        assert task.work() is True
        assert task.results["grid"] == rows
        assert task.results["best_valid_perplexity"] == 1.2


class TestEvaluateModelTask:
    @pytest.fixture
    def model(self):
        return Mock(combination_parameters=Mock(
            return_value={"alpha": 1.0, "beta": 1.0}
        ))

    @pytest.fixture
    def patched_harness(self, monkeypatch, model):
        prepare_data = Mock(return_value="data")
        monkeypatch.setattr(
            harness, "load_model",
            Mock(return_value=(model, ExperimentConfig()))
        )
        monkeypatch.setattr(harness, "prepare_data", prepare_data)
        monkeypatch.setattr(
            harness, "evaluate_model", Mock(return_value=["report"])
        )
        monkeypatch.setattr(
            harness, "write_reports", Mock(return_value=("t", "kv"))
        )
        return prepare_data

    def test_overrides_replace_stored_settings(self, patched_harness):
        task = tasks.EvaluateModelTask(
            "run/best.clkg", {"data_dir": "elsewhere"}
        )
        task.log = Mock()
        assert task.work() is True
        assert patched_harness.call_args[0][0].data_dir == "elsewhere"
        assert task.results["reports"] == ["report"]
        assert task.results["combination"] == {"alpha": 1.0, "beta": 1.0}
        assert task.results["files"] == ["t", "kv"]

    def test_combination_without_alpha(self, patched_harness, model):
        model.combination_parameters.side_effect = \
            UnsupportedCombination("mul")
        task = tasks.EvaluateModelTask("run/best.clkg")
        task.log = Mock()
        assert task.work() is True
        assert task.results["combination"] is None


def test_ablation_variant_task(monkeypatch):
    run_variant = Mock(return_value=["report"])
    monkeypatch.setattr(harness, "prepare_data", Mock(return_value="data"))
    monkeypatch.setattr(harness, "run_ablation_variant", run_variant)
    config = ExperimentConfig()
    task = tasks.AblationVariantTask(config, "no_d_gat", "runs")
    task.log = Mock()
    assert task.work() is True
    run_variant.assert_called_once_with(config, "no_d_gat", "data", "runs")
    assert task.results["variant"] == "no_d_gat"
    assert task.results["reports"] == ["report"]


def test_write_metrics_report_task(monkeypatch):
    write_reports = Mock(return_value=("table", "values"))
    monkeypatch.setattr(harness, "write_reports", write_reports)
    task = tasks.WriteMetricsReportTask(["a", "b"], "output")
    task.log = Mock()
    assert task.work() is True
    write_reports.assert_called_once_with(["a", "b"], "output")
    assert task.results == ["table", "values"]


@pytest.mark.parametrize("evaluate, expected_reports", [
    (True, ["report"]),
    (False, []),
])
def test_fit_baseline_task(monkeypatch, evaluate, expected_reports):
    fit = Mock()
    evaluate_baselines = Mock(return_value=["report"])
    monkeypatch.setattr(harness, "prepare_data", Mock(return_value="data"))
    monkeypatch.setattr(harness, "fit_baselines", fit)
    monkeypatch.setattr(harness, "evaluate_baselines", evaluate_baselines)
    config = ExperimentConfig()
    task = tasks.FitBaselineTask(
        config, ClickModelKind.SDBN, "out", evaluate=evaluate
    )
    task.log = Mock()
    assert task.work() is True
    fit.assert_called_once_with(config, [ClickModelKind.SDBN], "out", "data")
    assert evaluate_baselines.called is evaluate
    assert task.results == {
        "model": "SDBN",
        "output": "out",
        "reports": expected_reports,
    }


@pytest.mark.parametrize(
    "task",
    [
        tasks.DescribeLogTask("log.jsonl"),
        tasks.SplitLogTask("log.jsonl", "split", 0),
        tasks.BuildGraphsTask(ExperimentConfig(), "graphs"),
        tasks.GenerateSyntheticLogTask(GeneratorSettings(), "synthetic"),
        tasks.TrainModelTask(ExperimentConfig()),
        tasks.EvaluateModelTask("best.clkg"),
        tasks.AblationVariantTask(ExperimentConfig(), "full", "runs"),
        tasks.WriteMetricsReportTask([], "output"),
        tasks.FitBaselineTask(ExperimentConfig(), ClickModelKind.PBM, "out"),
    ]
)
def test_tasks_have_description(task):
    assert task.task_description() is not None
