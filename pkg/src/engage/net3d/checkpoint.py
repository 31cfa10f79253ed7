"""Binary checkpoint format.

``EGKM`` magic, u16 version, u16 record count, then per record: u16 name
length, UTF-8 name, u8 rank, u32 dims, float32 payload. All little-endian.
Besides the parameter tensors a ``meta.strides`` record (4 x 3) stores the
stem and stage strides so the architecture can be rebuilt on load, and a
``meta.input_scale`` scalar holds the fixed input gain.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagic, TruncatedFile, VersionMismatch
from .model import ModelConfig, Net3D

MAGIC = b"EGKM"
VERSION = 1


def save_checkpoint(model: Net3D, path: str | Path) -> None:
    c = model.config
    records = dict(model.parameters())
    records["meta.strides"] = np.array((c.stem_stride,) + tuple(c.stage_strides), dtype=np.float32)
    records["meta.input_scale"] = np.array([c.input_scale], dtype=np.float32)
    out = bytearray(MAGIC)
    out += struct.pack("<HH", VERSION, len(records))
    for name, arr in records.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile("checkpoint ends prematurely")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_records(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise BadMagic(f"{path}: not a model checkpoint")
    r = _Reader(data)
    r.take(4)
    version, count = r.unpack("<HH")
    if version != VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, expected {VERSION}")
    records = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(dims)) if dims else 1
        records[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
    return records


def load_checkpoint(path: str | Path, freeze_prefix: int = 0) -> Net3D:
    records = read_records(path)
    stem_w = records["stem.weight"]
    strides = records.get("meta.strides")
    kwargs = {}
    if strides is not None:
        s = [tuple(int(v) for v in row) for row in strides]
        kwargs = {"stem_stride": s[0], "stage_strides": tuple(s[1:])}
    if "meta.input_scale" in records:
        kwargs["input_scale"] = float(records["meta.input_scale"][0])
    config = ModelConfig(
        in_channels=stem_w.shape[1],
        num_classes=records["head.weight"].shape[0],
        stem_channels=stem_w.shape[0],
        stage_channels=tuple(records[f"stage{i}.weight"].shape[0] for i in (1, 2, 3)),
        kernel=tuple(stem_w.shape[2:]),
        freeze_prefix=freeze_prefix,
        **kwargs,
    )
    model = Net3D(config)
    for key, arr in model.parameters().items():
        if records[key].shape != arr.shape:
            raise TruncatedFile(f"{path}: tensor {key} has shape {records[key].shape}")
        arr[...] = records[key]
    return model
