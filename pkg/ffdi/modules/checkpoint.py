"""
FFDI - Checkpoint Module
Versioned binary container for a model: magic, format version, the FfdiConfig
as JSON, then every named parameter tensor (name, shape, little-endian raw
scalars). Loading rebuilds the model from the stored config and validates
every shape.
"""

import json
import struct

import numpy as np

from .config import model_config_from_dict, model_config_to_dict
from .errors import ConfigurationError, DataError, ShapeError
from .logger import get_logger
from .model import FfdiModel
from .utils import atomic_write_bytes

logger = get_logger(__name__)

MAGIC = b"FFDICKPT"
VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def encode_checkpoint(model):
    config_json = json.dumps(model_config_to_dict(model.cfg), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(config_json)), config_json]
    parts.append(struct.pack("<I", len(model.params)))
    for name, param in model.params.items():
        raw_name = name.encode("utf-8")
        array = np.ascontiguousarray(param.data)
        code = _CODE_FOR[array.dtype]
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", code, array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(array.astype(_DTYPE_CODES[code], copy=False).tobytes())
    return b"".join(parts)


def save_checkpoint(model, path):
    payload = encode_checkpoint(model)
    atomic_write_bytes(path, payload)
    logger.info("Saved checkpoint %s (%d tensors, %d bytes)", path, len(model.params), len(payload))
    return path


class _Reader:
    def __init__(self, payload, source):
        self.payload = payload
        self.offset = 0
        self.source = source

    def take(self, count, what):
        end = self.offset + count
        if end > len(self.payload):
            raise DataError(f"{self.source}: truncated checkpoint while reading {what} at byte {self.offset}")
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(payload, source="<checkpoint>"):
    """Returns (FfdiConfig, {name: array}) without building a model."""
    reader = _Reader(payload, source)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise DataError(f"{source}: not an ffdi checkpoint (bad magic at byte 0)")
    (version,) = reader.unpack("<I", "version")
    if version != VERSION:
        raise DataError(f"{source}: unsupported checkpoint version {version} (expected {VERSION})")
    (config_len,) = reader.unpack("<I", "config length")
    try:
        cfg = model_config_from_dict(json.loads(reader.take(config_len, "config").decode("utf-8")))
    except (ValueError, TypeError, ConfigurationError) as exc:
        raise DataError(f"{source}: stored model config is invalid: {exc}")
    (count,) = reader.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H", "name length")
        name = reader.take(name_len, "tensor name").decode("utf-8", errors="replace")
        code, ndim = reader.unpack("<BB", f"header of {name}")
        if code not in _DTYPE_CODES:
            raise DataError(f"{source}: tensor {name} has unknown dtype code {code}")
        shape = reader.unpack(f"<{ndim}I", f"shape of {name}")
        dtype = _DTYPE_CODES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        tensors[name] = np.frombuffer(reader.take(nbytes, f"data of {name}"), dtype=dtype).reshape(shape)
    if reader.offset != len(payload):
        raise DataError(f"{source}: {len(payload) - reader.offset} trailing bytes after the last tensor")
    return cfg, tensors


def load_checkpoint(path):
    try:
        with open(path, "rb") as handle:
            payload = handle.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}")
    cfg, tensors = decode_checkpoint(payload, source=path)
    model = FfdiModel(cfg)
    try:
        model.load_state_dict(tensors)
    except ShapeError as exc:
        raise DataError(f"{path}: {exc.message}")
    logger.info("Loaded checkpoint %s (%d tensors)", path, len(tensors))
    return model
