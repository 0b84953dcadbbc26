import io
import struct

import numpy as np
import pytest

from speedwagon_clickgraph import checkpoint
from speedwagon_clickgraph.exceptions import CheckpointFormatError


@pytest.fixture
def parameters():
    return {
        "embedding": np.arange(6, dtype=np.float32).reshape(3, 2),
        "bias": np.array([0.25, -1.5]),
        "scalar": np.array(3.0),
    }


def test_saved_checkpoint_reads_back(tmp_path, parameters):
    path = checkpoint.save_checkpoint(
        str(tmp_path / "model.clkg"),
        parameters,
        {"hidden_size": 2, "combination": "expmul"},
        {"epoch": 4},
    )
    loaded = checkpoint.read_checkpoint(path)
    assert sorted(loaded.parameters) == sorted(parameters)
    for name, value in parameters.items():
        np.testing.assert_array_equal(loaded.parameters[name], value)
        assert loaded.parameters[name].shape == value.shape
    assert loaded.hyperparameters == {
        "hidden_size": 2, "combination": "expmul"
    }
    assert loaded.metadata == {"epoch": 4}


def test_same_parameters_give_same_bytes(parameters):
    first = io.BytesIO()
    second = io.BytesIO()
    checkpoint.dump_checkpoint(
        checkpoint.Checkpoint(parameters, {"a": 1, "b": 2}), first
    )
    checkpoint.dump_checkpoint(
        checkpoint.Checkpoint(
            dict(reversed(list(parameters.items()))), {"b": 2, "a": 1}
        ),
        second
    )
    assert first.getvalue() == second.getvalue()


def test_header_layout(parameters):
    stream = io.BytesIO()
    checkpoint.dump_checkpoint(checkpoint.Checkpoint(parameters, {}), stream)
    magic, version, _ = struct.unpack("<4sIQ", stream.getvalue()[:16])
    assert magic == b"CLKG"
    assert version == checkpoint.CHECKPOINT_VERSION


def _dumped(parameters):
    stream = io.BytesIO()
    checkpoint.dump_checkpoint(checkpoint.Checkpoint(parameters, {}), stream)
    return stream.getvalue()


class TestCorruptCheckpoints:
    def test_bad_magic(self, parameters):
        data = b"NOPE" + _dumped(parameters)[4:]
        with pytest.raises(CheckpointFormatError):
            checkpoint.load_checkpoint(io.BytesIO(data))

    def test_unknown_version(self, parameters):
        data = bytearray(_dumped(parameters))
        data[4:8] = struct.pack("<I", 99)
        with pytest.raises(CheckpointFormatError):
            checkpoint.load_checkpoint(io.BytesIO(bytes(data)))

    def test_truncated_header(self):
        with pytest.raises(CheckpointFormatError):
            checkpoint.load_checkpoint(io.BytesIO(b"CLKG"))

    def test_truncated_payload(self, parameters):
        data = _dumped(parameters)[:-8]
        with pytest.raises(CheckpointFormatError):
            checkpoint.load_checkpoint(io.BytesIO(data))
