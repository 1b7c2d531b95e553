"""Binary tensor and checkpoint files, and PGM heatmaps.

Tensor file (all integers little-endian)::

    offset  size       field
    0       4          magic  b"SGET"
    4       2          version (uint16)
    6       1          rank (uint8)
    7       4 * rank   dims (uint32 each)
    ...     4 * prod   payload, float32, row-major

Checkpoint file::

    b"SGEC" | version uint16 | header length uint32 | UTF-8 JSON header
    | one tensor block per parameter, in model declaration order

The JSON header carries the layer specs, input shape, seeds, parameter names
and an echo of the run configuration.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import BadMagic, BadVersion, OutOfRange, TrailingBytes, TruncatedPayload

TENSOR_MAGIC = b"SGET"
TENSOR_VERSION = 1
CHECKPOINT_MAGIC = b"SGEC"
CHECKPOINT_VERSION = 1


def encode_tensor(array) -> bytes:
    arr = np.asarray(array)
    if arr.ndim > 255:
        raise ValueError("rank must fit in one byte")
    header = TENSOR_MAGIC + struct.pack("<HB", TENSOR_VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _take(buf, offset, size, what):
    if offset + size > len(buf):
        raise TruncatedPayload(f"{what}: need {size} bytes, only {len(buf) - offset} remain", len(buf))
    return buf[offset:offset + size]


def decode_tensor(buf: bytes, offset: int = 0):
    """Parse one tensor block starting at ``offset``; returns ``(array, end_offset)``."""
    magic = _take(buf, offset, 4, "magic")
    if magic != TENSOR_MAGIC:
        raise BadMagic(f"expected {TENSOR_MAGIC!r}, found {bytes(magic)!r}", offset)
    (version,) = struct.unpack("<H", _take(buf, offset + 4, 2, "version"))
    if version != TENSOR_VERSION:
        raise BadVersion(f"unsupported tensor version {version}", offset + 4)
    (rank,) = struct.unpack("<B", _take(buf, offset + 6, 1, "rank"))
    pos = offset + 7
    dims = struct.unpack(f"<{rank}I", _take(buf, pos, 4 * rank, "dims"))
    pos += 4 * rank
    nbytes = 4 * int(np.prod(dims, dtype=np.int64))
    payload = _take(buf, pos, nbytes, "payload")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    return arr, pos + nbytes


def write_tensor(path, array):
    with open(path, "wb") as f:
        f.write(encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    arr, end = decode_tensor(buf)
    if end != len(buf):
        raise TrailingBytes(f"{len(buf) - end} unexpected bytes after payload", end)
    return arr


# ---------------------------------------------------------------------------
# checkpoints


def encode_checkpoint(model, extra=None) -> bytes:
    names = [name for name, _ in model.named_parameters()]
    header = {
        "layers": [s.to_dict() for s in model.specs],
        "input_shape": list(model.input_shape),
        "seed": model.seed,
        "params": names,
        "config": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    out = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(blob)), blob]
    out += [encode_tensor(p) for _, p in model.named_parameters()]
    return b"".join(out)


def decode_checkpoint(buf: bytes):
    """Rebuild the model stored in ``buf``; returns ``(model, header)``."""
    from .nn import LayerSpec, build_model

    magic = _take(buf, 0, 4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise BadMagic(f"expected {CHECKPOINT_MAGIC!r}, found {bytes(magic)!r}", 0)
    version, hlen = struct.unpack("<HI", _take(buf, 4, 6, "header"))
    if version != CHECKPOINT_VERSION:
        raise BadVersion(f"unsupported checkpoint version {version}", 4)
    header = json.loads(bytes(_take(buf, 10, hlen, "json header")).decode("utf-8"))
    pos = 10 + hlen
    specs = [LayerSpec.from_dict(d) for d in header["layers"]]
    model = build_model(specs, header["seed"], tuple(header["input_shape"]))
    params = dict(model.named_parameters())
    if list(params) != header["params"]:
        raise ValueError(f"checkpoint parameter list {header['params']} does not match the layer specs")
    loaded = {}
    for name in header["params"]:
        arr, pos = decode_tensor(buf, pos)
        if arr.shape != params[name].shape:
            raise ValueError(f"parameter {name}: stored shape {arr.shape}, model expects {params[name].shape}")
        loaded[name] = arr
    if pos != len(buf):
        raise TrailingBytes(f"{len(buf) - pos} unexpected bytes after last tensor", pos)
    for name, arr in loaded.items():
        params[name][...] = arr
    return model, header


def save_checkpoint(path, model, extra=None):
    with open(path, "wb") as f:
        f.write(encode_checkpoint(model, extra))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())


# ---------------------------------------------------------------------------
# heatmaps


def heatmap_pixels(values, scale=1) -> np.ndarray:
    """Map ``[0, 1]`` values to uint8 with round-half-up, then upscale by ``scale``."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError(f"heatmap must be 2-D, got shape {v.shape}")
    if not np.all((v >= 0.0) & (v <= 1.0)):
        raise OutOfRange("heatmap values must lie in [0, 1]")
    px = np.floor(v * 255.0 + 0.5).astype(np.uint8)
    if scale > 1:
        px = np.kron(px, np.ones((scale, scale), dtype=np.uint8))
    return px


def write_heatmap(values, path, scale=16):
    """Write a binary (P5) 8-bit PGM, nearest-neighbour upscaled by ``scale``."""
    px = heatmap_pixels(values, scale)
    h, w = px.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(px.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    parts = buf.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise BadMagic("not a binary PGM", 0)
    w, h = (int(t) for t in parts[1].split())
    if parts[2] != b"255":
        raise BadVersion(f"unsupported maxval {parts[2]!r}", len(parts[0]) + len(parts[1]) + 2)
    data = parts[3]
    if len(data) < w * h:
        raise TruncatedPayload("pixel data too short", len(buf))
    return np.frombuffer(data[:w * h], dtype=np.uint8).reshape(h, w)
