"""Versioned binary model archive.

Layout (all integers little-endian)::

    b"AVFMODEL"            8-byte magic
    uint16 version
    uint32 header_len
    header_len bytes       UTF-8 JSON header (sorted keys)
    uint32 crc32(header)
    payloads               float64 '<f8', concatenated in header order

The header holds the model config, the training seed, free-form metadata and
one entry per tensor (``name``, ``dims``, ``offset``, ``crc32``). Whitening
transforms travel as ordinary tensors named ``whiten.<modality>.mean`` and
``whiten.<modality>.projection``.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptionError, FormatError
from .model import Model, ModelConfig
from .whiten import WhitenTransform

MAGIC = b"AVFMODEL"
VERSION = 1
_PREFIX = struct.Struct("<8sHI")
_CRC = struct.Struct("<I")


def _tensors(model: Model) -> list[tuple[str, np.ndarray]]:
    items = [(name, model.params[name]) for name in model.params]
    for modality in sorted(model.whiten):
        t = model.whiten[modality]
        items.append((f"whiten.{modality}.mean", t.mean))
        items.append((f"whiten.{modality}.projection", t.projection))
    return items


def to_bytes(model: Model, metadata: dict | None = None) -> bytes:
    entries, payloads, offset = [], [], 0
    for name, arr in _tensors(model):
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "dims": list(np.shape(arr)), "offset": offset, "crc32": zlib.crc32(raw)})
        payloads.append(raw)
        offset += len(raw)
    header = {
        "config": model.config.to_dict(),
        "seed": int(model.seed),
        "metadata": metadata or {},
        "tensors": entries,
        "payload_bytes": offset,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return b"".join([_PREFIX.pack(MAGIC, VERSION, len(hbytes)), hbytes, _CRC.pack(zlib.crc32(hbytes)), *payloads])


def from_bytes(data: bytes) -> tuple[Model, dict]:
    """Inverse of :func:`to_bytes`; returns ``(model, metadata)``."""
    if len(data) < _PREFIX.size:
        if MAGIC.startswith(data[: len(MAGIC)]):
            raise CorruptionError("archive truncated inside the preamble")
        raise FormatError("not a model archive (bad magic)")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise FormatError("not a model archive (bad magic)")
    if version != VERSION:
        raise FormatError(f"unsupported archive version {version} (expected {VERSION})")
    start = _PREFIX.size
    if len(data) < start + hlen + _CRC.size:
        raise CorruptionError("archive truncated inside the header")
    hbytes = data[start : start + hlen]
    (crc,) = _CRC.unpack_from(data, start + hlen)
    if zlib.crc32(hbytes) != crc:
        raise CorruptionError("header checksum mismatch")
    header = json.loads(hbytes)
    body = memoryview(data)[start + hlen + _CRC.size :]
    if len(body) != header["payload_bytes"]:
        raise CorruptionError(f"payload is {len(body)} bytes, header declares {header['payload_bytes']}")
    tensors = {}
    for e in header["tensors"]:
        n = 8 * int(np.prod(e["dims"], dtype=np.int64))
        raw = bytes(body[e["offset"] : e["offset"] + n])
        if len(raw) != n or zlib.crc32(raw) != e["crc32"]:
            raise CorruptionError(f"checksum mismatch in tensor {e['name']!r}")
        tensors[e["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(e["dims"])
    whiten = {}
    for name in [n for n in tensors if n.startswith("whiten.") and n.endswith(".mean")]:
        modality = name.split(".")[1]
        whiten[modality] = WhitenTransform(tensors.pop(name), tensors.pop(f"whiten.{modality}.projection"))
    model = Model(ModelConfig.from_dict(header["config"]), tensors, header["seed"], whiten)
    return model, header["metadata"]


def save_model(model: Model, path, metadata: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(model, metadata))


def load_model(path) -> Model:
    return load_model_with_metadata(path)[0]


def load_model_with_metadata(path) -> tuple[Model, dict]:
    return from_bytes(Path(path).read_bytes())
