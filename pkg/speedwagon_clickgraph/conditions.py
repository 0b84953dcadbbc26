"""Conditions."""
from __future__ import annotations

import os
import typing

if typing.TYPE_CHECKING:
    import speedwagon.validators
    import speedwagon.workflow


def candidate_exists(
        candidate: speedwagon.validators.FilePath,
        _: speedwagon.workflow.UserData) -> bool:
    """Check if a candidate exists.

    Args:
        candidate: value to check
        _:

    Returns: True if exists, False if not

    """
    return os.path.exists(candidate)


def value_provided(
        candidate: typing.Optional[str],
        _: speedwagon.workflow.UserData) -> bool:
    """Check if an optional field was filled in."""
    return bool(candidate)


def optional_candidate_exists(
        candidate: typing.Optional[str],
        user_data: speedwagon.workflow.UserData) -> bool:
    """Check if an optional field was filled in with an existing path."""
    return value_provided(candidate, user_data) \
        and candidate_exists(typing.cast(str, candidate), user_data)
