import struct

import numpy as np
import pytest

from dtln.models import TOPOLOGIES, build_model, get_topology
from dtln.weights import (
    MAGIC,
    NotAWeightFileError,
    ShapeMismatchError,
    TruncatedWeightFileError,
    VersionMismatchError,
    load_weights,
    save_weights,
)


@pytest.mark.parametrize("name", sorted(TOPOLOGIES))
def test_round_trip_bit_exact(name, tmp_path):
    p = build_model(name, 7)
    path = tmp_path / "w.wts"
    save_weights(p, path)
    q = load_weights(path)
    assert q.spec == p.spec and list(q.tensors) == list(p.tensors)
    for k in p.tensors:
        assert q[k].dtype == np.float32
        np.testing.assert_array_equal(q[k], p[k].astype(np.float32))
    save_weights(q, tmp_path / "again.wts")
    assert (tmp_path / "again.wts").read_bytes() == path.read_bytes()


def test_header_layout(tmp_path):
    save_weights(build_model("B1"), tmp_path / "w.wts")
    raw = (tmp_path / "w.wts").read_bytes()
    assert raw[:8] == MAGIC == b"DTLNWTS1"
    assert struct.unpack("<I", raw[8:12]) == (1,)
    n = struct.unpack("<I", raw[12:16])[0]
    assert raw[16 : 16 + n] == b"B1"


def test_bad_magic(tmp_path):
    path = tmp_path / "w.wts"
    save_weights(build_model("B1"), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(NotAWeightFileError, match="not a weight file"):
        load_weights(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "w.wts"
    save_weights(build_model("B1"), path)
    raw = bytearray(path.read_bytes())
    raw[8:12] = struct.pack("<I", 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatchError):
        load_weights(path)


def test_truncated(tmp_path):
    path = tmp_path / "w.wts"
    save_weights(build_model("B1"), path)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(TruncatedWeightFileError):
        load_weights(path)


def test_shape_mismatch_names_tensor(tmp_path):
    path = tmp_path / "b2.wts"
    save_weights(build_model("B2"), path)
    with pytest.raises(ShapeMismatchError, match="core0.analysis.U"):
        load_weights(path, get_topology("DTLN"))


def test_error_types_are_distinct():
    kinds = {NotAWeightFileError, VersionMismatchError, ShapeMismatchError, TruncatedWeightFileError}
    assert len(kinds) == 4
    assert not any(issubclass(a, b) for a in kinds for b in kinds if a is not b)
