import os

import pytest

from speedwagon_clickgraph import cli, harness
from speedwagon_clickgraph.exceptions import ConfigurationError
from speedwagon_clickgraph.pgm_baselines import ClickModelKind
from speedwagon_clickgraph.session_log import SPLIT_FILE_NAMES


@pytest.fixture
def log_file(tmp_path, make_line):
    path = tmp_path / "log.jsonl"
    lines = [
        make_line(f"s{number}", [("q1", [(f"d{number % 4}", number % 2)])])
        for number in range(12)
    ]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


class TestArgParser:
    def test_command_required(self):
        with pytest.raises(SystemExit):
            cli.get_arg_parser().parse_args([])

    def test_settings_flags(self):
        args = cli.get_arg_parser().parse_args(
            ["train", "--k", "4", "--data-dir", "split", "--set", "lr=0.1"]
        )
        config = cli._experiment_config(args)
        assert config.k == 4
        assert config.data_dir == "split"
        assert config.lr == 0.1

    def test_flag_beats_config_file(self, tmp_path):
        settings = tmp_path / "settings.yml"
        settings.write_text("k: 16\nbatch_size: 4\n")
        args = cli.get_arg_parser().parse_args(
            ["train", "--config", str(settings), "--k", "2"]
        )
        config = cli._experiment_config(args)
        assert config.k == 2
        assert config.batch_size == 4

    def test_baseline_models_case_insensitive(self):
        args = cli.get_arg_parser().parse_args(
            ["baseline-fit", "--output", "out", "--models", "pbm", "Dcm"]
        )
        assert cli._kinds(args.models) == [
            ClickModelKind.PBM, ClickModelKind.DCM
        ]

    def test_unknown_variant_rejected(self):
        with pytest.raises(SystemExit):
            cli.get_arg_parser().parse_args(
                ["ablate", "--variants", "no_gru"]
            )


class TestMain:
    def test_parse(self, log_file, capsys):
        assert cli.main(["parse", log_file]) == 0
        out = capsys.readouterr().out
        assert "sessions: 12" in out
        assert "sparsity:" in out

    def test_parse_malformed_log(self, tmp_path, capsys):
        path = tmp_path / "broken.jsonl"
        path.write_text("not json\n")
        assert cli.main(["parse", str(path)]) == 1
        assert "clickgraph: " in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert cli.main(["parse", str(tmp_path / "missing.jsonl")]) == 1
        assert "clickgraph: " in capsys.readouterr().err

    def test_split(self, log_file, tmp_path, capsys):
        output = tmp_path / "split"
        assert cli.main(
            ["split", log_file, "--output", str(output), "--seed", "1"]
        ) == 0
        for file_name in SPLIT_FILE_NAMES:
            assert (output / file_name).exists()
        assert "10 sessions" in capsys.readouterr().out

    def test_invalid_setting(self, capsys):
        assert cli.main(["train", "--k", "0"]) == 1
        assert "k must be 1 or greater" in capsys.readouterr().err

    def test_synth_invalid_settings(self, tmp_path, capsys):
        assert cli.main(
            ["synth", "--output", str(tmp_path), "--sessions", "0"]
        ) == 1
        assert "sessions" in capsys.readouterr().err

    def test_synth_with_split(self, tmp_path, capsys):
        assert cli.main(
            [
                "synth", "--output", str(tmp_path), "--sessions", "20",
                "--queries", "4", "--docs", "12", "--split-seed", "0",
            ]
        ) == 0
        assert "Wrote 20 PBM sessions" in capsys.readouterr().out
        assert os.path.exists(tmp_path / SPLIT_FILE_NAMES[0])

    def test_train_prints_best_epoch(self, monkeypatch, capsys):
        result = harness.TrainingResult(
            model=None,
            run_dir="run",
            checkpoint_path="run/best.clkg",
            epochs=[
                harness.EpochRecord(1, 0.5, 1.4),
                harness.EpochRecord(2, 0.4, 1.3),
            ],
            best_epoch=2,
            best_valid_perplexity=1.3,
        )
        monkeypatch.setattr(harness, "train", lambda config: result)
        assert cli.main(["train"]) == 0
        out = capsys.readouterr().out
        assert "epoch 2 train_loss 0.400000 valid_ppl 1.300000" in out
        assert "Best epoch 2" in out

    def test_ablate_errors_are_reported(self, monkeypatch, capsys):
        def fail(config, variants):
            raise ConfigurationError("no split")
        monkeypatch.setattr(harness, "ablate", fail)
        assert cli.main(["ablate"]) == 1
        assert "clickgraph: no split" in capsys.readouterr().err
