"""Binary checkpoint format for model parameters.

Layout (all integers little-endian):

    magic "RSE1" | u32 version | u32 tensor count
    per tensor: u16 name length | name UTF-8 | u8 dtype code (1 = f32,
                2 = f64) | u8 rank | u32 extents[rank] | raw values
    trailing u64 checksum

The checksum is the 8-byte BLAKE2b digest of every preceding byte
(header included), stored little-endian, and is validated on load.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .autodiff import Tensor, ValidationError

MAGIC = b"RSE1"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPES = {1: np.dtype(np.float32), 2: np.dtype(np.float64)}


class ChecksumError(ValueError):
    """Stored checksum does not match the payload."""


def _digest(payload):
    return hashlib.blake2b(payload, digest_size=8).digest()


def save_checkpoint(path, named_tensors):
    """Write (name, Tensor) pairs; round-trips bit-exactly."""
    named = list(named_tensors)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(named))]
    for name, tensor in named:
        data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
        code = _DTYPE_CODES.get(data.dtype)
        if code is None:
            raise ValidationError(f"unsupported dtype {data.dtype} for tensor {name!r}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", code, data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(np.ascontiguousarray(data, dtype=data.dtype.newbyteorder("<")).tobytes())
    payload = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(_digest(payload))


def load_checkpoint(path):
    """Read back a dict name -> numpy array; validates magic and checksum."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 + 8 or blob[:4] != MAGIC:
        raise ValidationError(f"{path} is not a checkpoint file")
    payload, stored = blob[:-8], blob[-8:]
    if _digest(payload) != stored:
        raise ChecksumError(f"checksum mismatch in {path}")
    version, count = struct.unpack_from("<II", payload, 4)
    if version != VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    offset = 12
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", payload, offset)
        offset += 2
        name = payload[offset : offset + name_len].decode("utf-8")
        offset += name_len
        code, rank = struct.unpack_from("<BB", payload, offset)
        offset += 2
        extents = struct.unpack_from(f"<{rank}I", payload, offset)
        offset += 4 * rank
        dtype = _CODE_DTYPES.get(code)
        if dtype is None:
            raise ValidationError(f"unknown dtype code {code} for tensor {name!r}")
        nbytes = int(np.prod(extents, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(payload, dtype=dtype.newbyteorder("<"), count=int(np.prod(extents, dtype=np.int64)), offset=offset)
        out[name] = arr.reshape(extents).astype(dtype)
        offset += nbytes
    if offset != len(payload):
        raise ValidationError(f"trailing bytes in {path}")
    return out


def restore_model(model, loaded):
    """Copy loaded arrays into a built model's parameters by name."""
    params = dict(model.named_parameters())
    missing = set(params) - set(loaded)
    extra = set(loaded) - set(params)
    if missing or extra:
        raise ValidationError(
            f"checkpoint does not match model (missing {sorted(missing)}, extra {sorted(extra)})"
        )
    for name, tensor in params.items():
        arr = loaded[name]
        if arr.shape != tensor.data.shape:
            raise ValidationError(f"shape mismatch for {name}: {arr.shape} vs {tensor.data.shape}")
        tensor.data = arr.astype(tensor.data.dtype)
    return model
