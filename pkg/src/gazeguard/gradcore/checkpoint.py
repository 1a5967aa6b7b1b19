"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"GGCK"  u16 version  u32 layer_count  u8[3] input_rank+dims(u32 each)
    per layer:
        u8 kind_tag  u8 trainable  u8 n_config  u32[n_config]
        u8 n_arrays
        per array: u8 name_len, name bytes, u8 ndim, u32[ndim] dims, f32 data
    u32 crc32 of everything above

Parameters are always stored as float32; a float32 graph therefore
round-trips bit-exactly.
"""

from __future__ import annotations

import hashlib
import io
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import DataError
from .graph import LayerGraph
from .layers import KIND_TAGS, LAYER_CLASSES, Layer

MAGIC = b"GGCK"
VERSION = 1
_TAG_TO_KIND = {v: k for k, v in KIND_TAGS.items()}


class CheckpointError(DataError):
    pass


def dumps(graph: LayerGraph) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(graph.layers)))
    buf.write(struct.pack("<B", len(graph.input_shape)))
    buf.write(struct.pack(f"<{len(graph.input_shape)}I", *graph.input_shape))
    for layer in graph.layers:
        cfg = layer.config()
        buf.write(struct.pack("<BBB", KIND_TAGS[layer.kind], int(layer.trainable), len(cfg)))
        buf.write(struct.pack(f"<{len(cfg)}I", *cfg))
        buf.write(struct.pack("<B", len(layer.params)))
        for name, value in layer.params.items():
            raw = name.encode()
            buf.write(struct.pack("<B", len(raw)) + raw)
            buf.write(struct.pack("<B", value.ndim))
            buf.write(struct.pack(f"<{value.ndim}I", *value.shape))
            buf.write(np.ascontiguousarray(value, dtype="<f4").tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def _empty_layer(kind: str, cfg: list[int]) -> Layer:
    cls = LAYER_CLASSES[kind]
    if kind == "concat_aux":
        return cls(cfg[0])
    layer = cls.__new__(cls)
    Layer.__init__(layer)
    return layer


def loads(data: bytes, dtype=np.float32) -> LayerGraph:
    if len(data) < 4 + 6 + 4 or data[:4] != MAGIC:
        raise CheckpointError("not a GGCK checkpoint (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    r = _Reader(body)
    r.raw(4)
    version, n_layers = r.take("<HI")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (rank,) = r.take("<B")
    input_shape = r.take(f"<{rank}I")
    layers = []
    for _ in range(n_layers):
        tag, trainable, n_cfg = r.take("<BBB")
        if tag not in _TAG_TO_KIND:
            raise CheckpointError(f"unknown layer tag {tag}")
        cfg = list(r.take(f"<{n_cfg}I"))
        layer = _empty_layer(_TAG_TO_KIND[tag], cfg)
        layer.trainable = bool(trainable)
        (n_arrays,) = r.take("<B")
        for _ in range(n_arrays):
            (name_len,) = r.take("<B")
            name = r.raw(name_len).decode()
            (ndim,) = r.take("<B")
            shape = r.take(f"<{ndim}I")
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(r.raw(4 * count), dtype="<f4").reshape(shape)
            layer.params[name] = arr.astype(dtype)
        layer.zero_grads()
        layers.append(layer)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after last layer")
    return LayerGraph(layers, tuple(input_shape))


def save(graph: LayerGraph, path: str | Path) -> None:
    from ..formats import atomic_write_bytes

    atomic_write_bytes(path, dumps(graph))


def load(path: str | Path, dtype=np.float32) -> LayerGraph:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})") from None
    try:
        return loads(data, dtype)
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from None


def digest(graph: LayerGraph, layers: range | None = None) -> str:
    """SHA-256 over the serialized parameters of the selected layers."""
    h = hashlib.sha256()
    idx = range(len(graph.layers)) if layers is None else layers
    for i in idx:
        for name, value in graph.layers[i].params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(value).tobytes())
    return h.hexdigest()
