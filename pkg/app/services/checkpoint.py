"""Topology-free checkpoint file.

Layout (all integers little-endian)::

    offset 0    8 bytes   magic b"SRNNCKPT"
    offset 8    uint32    format version
    offset 12   uint32    header length H in bytes
    offset 16   H bytes   UTF-8 JSON header, keys sorted, no whitespace:
                          {"arrays": [{"name", "shape", "offset", "count"}, ...],
                           "hyperparams": {...}, "meta": {...},
                           "scaler": {"min", "max"} | null, "version"}
    offset 16+H           float64 little-endian payload; array k occupies
                          count_k values starting at value offset_k, in
                          the group order of `srnn.param_shapes`

No graph information is stored: any RoadGraph can be bound at load time.
The file is a pure function of its inputs, so identical training runs give
identical bytes.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from ..errors import CheckpointError, ConfigError
from ..models.hyperparams import Hyperparams
from .dataset import Scaler
from .srnn import SrnnParams, param_shapes

logger = logging.getLogger(__name__)

MAGIC = b"SRNNCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")
_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    params: SrnnParams
    scaler: Optional[Scaler] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def hyperparams(self) -> Hyperparams:
        return self.params.hyperparams


def to_bytes(ckpt: Checkpoint) -> bytes:
    hp = ckpt.params.hyperparams
    expected = param_shapes(hp)
    entries = []
    chunks = []
    offset = 0
    for name, shape in expected.items():
        arr = ckpt.params.arrays[name]
        if arr.shape != shape:
            raise CheckpointError(f"{name}: shape {arr.shape} does not match {shape}")
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"{name}: refusing to save non-finite weights")
        entries.append({"name": name, "shape": list(shape), "offset": offset, "count": int(arr.size)})
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())
        offset += arr.size
    header = {
        "arrays": entries,
        "hyperparams": hp.to_dict(),
        "meta": ckpt.meta,
        "scaler": ckpt.scaler.to_dict() if ckpt.scaler is not None else None,
        "version": FORMAT_VERSION,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)) + blob + b"".join(chunks)


def from_bytes(data: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{source}: truncated checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: format version {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + header_len].decode("utf-8"))
        hp = Hyperparams.from_dict(header["hyperparams"])
    except (ValueError, KeyError, TypeError, ConfigError) as e:
        raise CheckpointError(f"{source}: corrupt header: {e}") from e

    body = data[start + header_len:]
    if len(body) % _DTYPE.itemsize:
        raise CheckpointError(f"{source}: payload is not a whole number of float64 values")
    payload = np.frombuffer(body, dtype=_DTYPE)

    expected = param_shapes(hp)
    try:
        entries = [
            (str(e["name"]), tuple(int(d) for d in e["shape"]), int(e["count"]), int(e["offset"]))
            for e in header["arrays"]
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{source}: corrupt array table: {e!r}") from e
    names = [name for name, *_ in entries]
    if names != list(expected):
        raise CheckpointError(f"{source}: weight arrays {names} do not match hyperparameters")
    arrays: Dict[str, np.ndarray] = {}
    total = 0
    for name, shape, count, offset in entries:
        if shape != expected[name] or count != int(np.prod(shape)) or offset != total:
            raise CheckpointError(f"{source}: array {name} has inconsistent shape/count/offset")
        if offset + count > payload.size:
            raise CheckpointError(f"{source}: array {name} runs past the end of the payload")
        arrays[name] = payload[offset:offset + count].astype(np.float64).reshape(shape)
        total += count
    if total != payload.size:
        raise CheckpointError(f"{source}: {payload.size - total} trailing value(s) after the last array")

    try:
        scaler = header.get("scaler")
        scaler = Scaler(min=float(scaler["min"]), max=float(scaler["max"])) if scaler else None
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{source}: corrupt scaler: {e!r}") from e
    return Checkpoint(params=SrnnParams(hp, arrays), scaler=scaler, meta=header.get("meta") or {})


def save_checkpoint(path: Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(ckpt))
    logger.info("wrote checkpoint %s (%d scalars)", path, ckpt.params.num_scalars())
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    return from_bytes(path.read_bytes(), source=str(path))
