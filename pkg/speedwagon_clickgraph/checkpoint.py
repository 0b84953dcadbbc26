"""Checkpoint files for trained parameters.

Layout, all integers little endian:

==========  ===========================================================
bytes       content
==========  ===========================================================
4           magic ``CLKG``
4           uint32 format version
8           uint64 length of the manifest in bytes
n           UTF-8 JSON manifest
rest        float64 (``<f8``) parameter payload
==========  ===========================================================

The manifest holds the hyperparameters, free form metadata and a
parameter table giving each parameter's name, shape, offset and count in
units of float64 values from the start of the payload. Keys are sorted,
so identical parameters always give identical bytes.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from typing import Any, BinaryIO, Dict, Mapping, Optional

import numpy as np

from speedwagon_clickgraph.exceptions import CheckpointFormatError

__all__ = [
    "Checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "dump_checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "read_checkpoint",
]

CHECKPOINT_MAGIC = b"CLKG"
CHECKPOINT_VERSION = 1
PAYLOAD_DTYPE = "<f8"

_HEADER = struct.Struct("<4sIQ")


@dataclasses.dataclass
class Checkpoint:
    parameters: Dict[str, np.ndarray]
    hyperparameters: Dict[str, Any]
    metadata: Dict[str, Any] = dataclasses.field(default_factory=dict)


def dump_checkpoint(checkpoint: Checkpoint, stream: BinaryIO) -> None:
    """Serialize a checkpoint into a binary stream."""
    table = []
    offset = 0
    payload = []
    for name in sorted(checkpoint.parameters):
        value = np.ascontiguousarray(
            checkpoint.parameters[name], dtype=PAYLOAD_DTYPE
        )
        table.append(
            {
                "name": name,
                "shape": list(value.shape),
                "offset": offset,
                "count": int(value.size),
            }
        )
        offset += int(value.size)
        payload.append(value.tobytes())
    manifest = json.dumps(
        {
            "dtype": PAYLOAD_DTYPE,
            "hyperparameters": checkpoint.hyperparameters,
            "metadata": checkpoint.metadata,
            "parameters": table,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    stream.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                              len(manifest)))
    stream.write(manifest)
    for chunk in payload:
        stream.write(chunk)


def load_checkpoint(stream: BinaryIO) -> Checkpoint:
    """Read a checkpoint written by :func:`dump_checkpoint`.

    Raises:
        CheckpointFormatError: on a bad magic number, an unknown version or
            a payload that does not match the parameter table.
    """
    header = stream.read(_HEADER.size)
    if len(header) != _HEADER.size:
        raise CheckpointFormatError("Checkpoint is truncated")
    magic, version, manifest_length = _HEADER.unpack(header)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"Not a checkpoint, magic was {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"Unsupported checkpoint version {version}"
        )
    try:
        manifest = json.loads(stream.read(manifest_length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise CheckpointFormatError(
            f"Unreadable checkpoint manifest: {error}"
        ) from error
    if manifest.get("dtype") != PAYLOAD_DTYPE:
        raise CheckpointFormatError(
            f"Unsupported payload dtype {manifest.get('dtype')}"
        )
    payload = np.frombuffer(stream.read(), dtype=PAYLOAD_DTYPE)
    parameters: Dict[str, np.ndarray] = {}
    for entry in manifest["parameters"]:
        start = entry["offset"]
        end = start + entry["count"]
        if end > payload.size:
            raise CheckpointFormatError(
                f"Payload too short for parameter {entry['name']}"
            )
        parameters[entry["name"]] = payload[start:end].reshape(
            entry["shape"]
        ).copy()
    return Checkpoint(
        parameters=parameters,
        hyperparameters=manifest.get("hyperparameters", {}),
        metadata=manifest.get("metadata", {}),
    )


def save_checkpoint(
    path: str,
    parameters: Mapping[str, np.ndarray],
    hyperparameters: Mapping[str, Any],
    metadata: Optional[Mapping[str, Any]] = None
) -> str:
    with open(path, "wb") as write_file:
        dump_checkpoint(
            Checkpoint(
                parameters=dict(parameters),
                hyperparameters=dict(hyperparameters),
                metadata=dict(metadata or {}),
            ),
            write_file
        )
    return path


def read_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as read_file:
        return load_checkpoint(read_file)
