"""``OSCN`` model files.

Layout (all integers little-endian)::

    b"OSCN" | u16 version | u32 header length | UTF-8 JSON header
    | one OSTN tensor payload per directory entry | u32 CRC-32 of all prior bytes

The header carries the stream id, network spec, crop and canonical sizes,
channel means, class names and the ordered tensor directory.
"""
from __future__ import annotations

import io
import json
import os
import struct
import zlib
from pathlib import Path
from typing import Optional

import numpy as np

from .layers import NetworkSpec
from .streams import StreamId, StreamModel
from .tensor import encode_tensor, read_tensor

MAGIC = b"OSCN"
VERSION = 1


class ModelFormatError(ValueError):
    pass


class StreamMismatchError(ValueError):
    pass


def encode_model(model: StreamModel) -> bytes:
    directory = []
    payload = bytearray()
    for name in sorted(model.params):
        for part, arr in zip(("weights", "bias"), model.params[name]):
            directory.append({"name": name, "part": part, "shape": list(arr.shape), "dtype": arr.dtype.str})
            payload += encode_tensor(arr)
    header = {
        "stream": {"axis": model.id.axis, "depth": model.id.depth, "variant": model.id.variant},
        "network": model.spec.to_dict(),
        "crop_size": model.crop_size,
        "canonical_size": model.canonical_size,
        "channel_means": list(model.channel_means),
        "class_names": list(model.class_names),
        "tensors": directory,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<HI", VERSION, len(head)) + head + bytes(payload)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_model(buf: bytes) -> StreamModel:
    if len(buf) < 14:
        raise ModelFormatError("model file truncated")
    if buf[:4] != MAGIC:
        raise ModelFormatError("not an OSCN model file (bad magic)")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise ModelFormatError("checksum mismatch: model file is corrupt or truncated")
    version, head_len = struct.unpack("<HI", buf[4:10])
    if version != VERSION:
        raise ModelFormatError(f"unsupported model file version {version}")
    try:
        header = json.loads(buf[10 : 10 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable header: {exc}") from None
    stream = io.BytesIO(buf[10 + head_len : -4])
    parts: dict = {}
    for entry in header["tensors"]:
        try:
            t = read_tensor(stream)
        except ValueError as exc:
            raise ModelFormatError(f"tensor {entry['name']}/{entry['part']}: {exc}") from None
        if list(t.shape) != entry["shape"]:
            raise ModelFormatError(f"tensor {entry['name']} shape disagrees with directory")
        parts.setdefault(entry["name"], {})[entry["part"]] = t
    if stream.read(1):
        raise ModelFormatError("trailing bytes after tensor payloads")
    params = {name: (p["weights"], p["bias"]) for name, p in parts.items()}
    spec = NetworkSpec.from_dict(header["network"])
    if set(params) != set(spec.param_shapes()):
        raise ModelFormatError("tensor directory does not match the network spec")
    s = header["stream"]
    return StreamModel(
        id=StreamId(s["axis"], s["depth"], s["variant"]),
        spec=spec,
        params=params,
        crop_size=header["crop_size"],
        channel_means=tuple(header["channel_means"]),
        class_names=tuple(header["class_names"]),
        canonical_size=header["canonical_size"],
    )


def save_model(model: StreamModel, path) -> None:
    """Write atomically: a crash leaves either the old file or none."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(encode_model(model))
    os.replace(tmp, path)


def load_model(path, expect: Optional[StreamId] = None, expect_axis: Optional[str] = None) -> StreamModel:
    with open(path, "rb") as fh:
        model = decode_model(fh.read())
    if expect is not None and model.id != expect:
        raise StreamMismatchError(f"{path}: holds stream {model.id.label}, expected {expect.label}")
    if expect_axis is not None and model.id.axis != expect_axis:
        raise StreamMismatchError(f"{path}: holds a {model.id.axis} stream, expected {expect_axis}")
    return model
