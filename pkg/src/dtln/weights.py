"""Binary weight files.

Layout (little-endian)::

    8 bytes   magic b"DTLNWTS1"
    u32       format version
    u32 + n   topology name, UTF-8
    u32       tensor count
    per tensor:
      u32 + n   name, UTF-8
      u32       rank
      u32*rank  dims
      f32*prod  data, row-major
"""
from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Optional

import numpy as np

from .models import ModelParams, TopologySpec, get_topology, param_shapes

MAGIC = b"DTLNWTS1"
VERSION = 1


class WeightFileError(Exception):
    """Base class for unreadable or incompatible weight files."""


class NotAWeightFileError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class ShapeMismatchError(WeightFileError):
    pass


class TruncatedWeightFileError(WeightFileError):
    pass


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_weights(params: ModelParams, path) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION), _pack_str(params.spec.name), struct.pack("<I", len(params.tensors))]
    for name, t in params.tensors.items():
        chunks.append(_pack_str(name))
        chunks.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        chunks.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedWeightFileError(f"weight file truncated at byte {len(self.buf)} (needed {self.pos + n})")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def load_weights(path, spec: Optional[TopologySpec] = None) -> ModelParams:
    """Read a weight file; tensors come back as float32.

    If ``spec`` is given, the stored tensor table must match that topology.
    """
    path = Path(path)
    r = _Reader(path.read_bytes())
    if len(r.buf) < len(MAGIC) or r.take(len(MAGIC)) != MAGIC:
        raise NotAWeightFileError(f"{path}: not a weight file")
    version = r.u32()
    if version != VERSION:
        raise VersionMismatchError(f"{path}: weight format version {version}, expected {VERSION}")
    topo_name = r.string()
    count = r.u32()
    tensors = OrderedDict()
    for _ in range(count):
        name = r.string()
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        n = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(r.buf):
        raise WeightFileError(f"{path}: {len(r.buf) - r.pos} trailing bytes after tensor table")

    if spec is None:
        try:
            spec = get_topology(topo_name)
        except ValueError as exc:
            raise ShapeMismatchError(f"{path}: {exc}") from None
    _check_table(path, spec, topo_name, tensors)
    return ModelParams(spec, tensors)


def _check_table(path, spec: TopologySpec, topo_name: str, tensors) -> None:
    expected = list(param_shapes(spec).items())
    found = [(k, tuple(v.shape)) for k, v in tensors.items()]
    for i, (want, got) in enumerate(zip(expected, found)):
        if want != got:
            raise ShapeMismatchError(
                f"{path}: tensor #{i} is {got[0]}{list(got[1])} in file ({topo_name}), "
                f"but {spec.name} expects {want[0]}{list(want[1])}"
            )
    if len(expected) != len(found):
        missing = expected[len(found)][0] if len(expected) > len(found) else found[len(expected)][0]
        raise ShapeMismatchError(
            f"{path}: file has {len(found)} tensors, {spec.name} expects {len(expected)} (first difference: {missing})"
        )
