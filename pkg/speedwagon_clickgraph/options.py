"""Workflow options shared by the GraphCM workflows."""
from __future__ import annotations

from typing import Optional

import speedwagon
import speedwagon.workflow
from speedwagon import validators

from speedwagon_clickgraph import conditions
from speedwagon_clickgraph.config import ExperimentConfig, load_config_file
from speedwagon_clickgraph.exceptions import ConfigurationError

__all__ = [
    "experiment_settings",
    "settings_file_option",
    "split_directory_option",
    "output_directory_option",
]


def experiment_settings(
    settings_file: Optional[str],
    **overrides: object
) -> ExperimentConfig:
    """Settings from an optional file with workflow options on top.

    Raises:
        speedwagon.JobCancelled: if the settings are invalid.
    """
    try:
        return load_config_file(settings_file, overrides)
    except ConfigurationError as error:
        raise speedwagon.JobCancelled(str(error)) from error


def settings_file_option() -> speedwagon.workflow.FileSelectData:
    """Optional YAML settings file."""
    settings_file = speedwagon.workflow.FileSelectData(
        "Settings File", required=False
    )
    settings_file.filter = "Settings (*.yml *.yaml)"
    settings_file.add_validation(
        validators.ExistsOnFileSystem(),
        condition=conditions.value_provided
    )
    settings_file.add_validation(
        validators.IsFile(),
        condition=conditions.optional_candidate_exists
    )
    return settings_file


def split_directory_option(
    label: str = "Input"
) -> speedwagon.workflow.DirectorySelect:
    """Directory holding train.jsonl, valid.jsonl and test.jsonl."""
    input_path = speedwagon.workflow.DirectorySelect(label)
    input_path.add_validation(validators.ExistsOnFileSystem())
    input_path.add_validation(
        validators.IsDirectory(),
        condition=conditions.candidate_exists
    )
    return input_path


def output_directory_option(
    label: str = "Output"
) -> speedwagon.workflow.DirectorySelect:
    output_path = speedwagon.workflow.DirectorySelect(label)
    output_path.add_validation(validators.ExistsOnFileSystem())
    return output_path
