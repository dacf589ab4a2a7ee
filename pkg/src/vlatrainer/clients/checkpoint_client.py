"""
Binary container shared by checkpoints and trajectory files.

Layout: 8-byte magic, u32 little-endian format version, u64 little-endian header
length, UTF-8 JSON header, then the tensors as contiguous little-endian 64-bit floats.
"""
import json
import logging
import os
import struct
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import ValidationError

from vlatrainer.errors import CheckpointError
from vlatrainer.model.checkpoint import CheckpointHeader, TensorEntry
from vlatrainer.nn.params import ParamStore
from vlatrainer.utils.constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION

logger = logging.getLogger(__name__)

_PREFIX = struct.Struct("<8sIQ")
_PAYLOAD_DTYPE = np.dtype("<f8")

PARAM_PREFIX = "param/"
FIRST_MOMENT_PREFIX = "adam.m/"
SECOND_MOMENT_PREFIX = "adam.v/"


@dataclass
class Checkpoint:
    header: CheckpointHeader
    tensors: dict[str, NDArray[np.float64]] = field(default_factory=dict)


def encode_container(tensors: Mapping[str, ArrayLike], header: CheckpointHeader) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, value in tensors.items():
        array = np.ascontiguousarray(value, dtype=_PAYLOAD_DTYPE)
        raw = array.tobytes(order="C")
        entries.append(TensorEntry(name=name, shape=list(array.shape), offset=offset, length=len(raw)))
        chunks.append(raw)
        offset += len(raw)
    full_header = header.model_copy(update={"tensors": entries})
    header_bytes = json.dumps(full_header.model_dump(mode="json"), sort_keys=True).encode("utf-8")
    return _PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)) + header_bytes + b"".join(chunks)


def _validation_field(error: ValidationError) -> str:
    first = error.errors()[0]
    return ".".join(str(part) for part in first["loc"]) or "header"


def decode_container(data: bytes) -> Checkpoint:
    """
    Parse a container.

    Raises:
        CheckpointError: Naming the header field that is missing or inconsistent
    """
    if len(data) < _PREFIX.size:
        raise CheckpointError("File too short for a container prefix", "magic")
    magic, version, header_length = _PREFIX.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"Bad magic {magic!r}", "magic")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported format version {version}", "version")
    header_end = _PREFIX.size + header_length
    if header_end > len(data):
        raise CheckpointError(f"Header length {header_length} runs past the end of the file", "header_length")
    try:
        raw_header = json.loads(data[_PREFIX.size:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Header is not valid JSON: {e}", "header") from e
    try:
        header = CheckpointHeader.model_validate(raw_header)
    except ValidationError as e:
        raise CheckpointError(f"Invalid header: {e.errors()[0]['msg']}", _validation_field(e)) from e

    payload = data[header_end:]
    tensors: dict[str, NDArray[np.float64]] = {}
    for index, entry in enumerate(header.tensors):
        if entry.name in tensors:
            raise CheckpointError(f"Duplicate tensor {entry.name!r}", f"tensors.{index}.name")
        if entry.offset + entry.length > len(payload):
            raise CheckpointError(f"Tensor {entry.name!r} runs past the payload", f"tensors.{index}.offset")
        flat = np.frombuffer(payload, dtype=_PAYLOAD_DTYPE, count=entry.length // 8, offset=entry.offset)
        tensors[entry.name] = flat.astype(np.float64).reshape(entry.shape)
    return Checkpoint(header=header, tensors=tensors)


class CheckpointClient:

    def save(self, path: Path, tensors: Mapping[str, ArrayLike], header: CheckpointHeader) -> Path:
        """Write atomically: the file only appears once fully written."""
        path.parent.mkdir(parents=True, exist_ok=True)
        data = encode_container(tensors, header)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)
        logger.debug(f"Wrote {header.kind} container {path} ({len(data)} bytes)")
        return path

    def load(self, path: Path, kind: Optional[str] = None) -> Checkpoint:
        if not path.exists():
            raise CheckpointError(f"No checkpoint at {path}")
        checkpoint = decode_container(path.read_bytes())
        if kind is not None and checkpoint.header.kind != kind:
            raise CheckpointError(f"Expected a {kind} container, found {checkpoint.header.kind}", "kind")
        return checkpoint


def params_to_tensors(store: ParamStore, with_moments: bool = False) -> dict[str, NDArray[np.float64]]:
    tensors = {f"{PARAM_PREFIX}{name}": store[name] for name in store}
    if with_moments:
        tensors.update({f"{FIRST_MOMENT_PREFIX}{name}": store.first_moment[name] for name in store})
        tensors.update({f"{SECOND_MOMENT_PREFIX}{name}": store.second_moment[name] for name in store})
    return tensors


def params_from_tensors(tensors: Mapping[str, NDArray[np.float64]], step_count: int = 0) -> ParamStore:
    store = ParamStore()
    for key, value in tensors.items():
        if key.startswith(PARAM_PREFIX):
            store.add(key[len(PARAM_PREFIX):], value)
    if not len(store):
        raise CheckpointError("Container holds no parameters", "tensors")
    for name in store:
        m = tensors.get(f"{FIRST_MOMENT_PREFIX}{name}")
        v = tensors.get(f"{SECOND_MOMENT_PREFIX}{name}")
        if m is not None and v is not None:
            store.first_moment[name] = np.array(m)
            store.second_moment[name] = np.array(v)
    store.step_count = step_count
    return store


def header_extra(checkpoint: Checkpoint, key: str) -> Any:
    if key not in checkpoint.header.extra:
        raise CheckpointError(f"Missing {key!r}", f"extra.{key}")
    return checkpoint.header.extra[key]
