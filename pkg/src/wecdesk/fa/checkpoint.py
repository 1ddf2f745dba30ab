"""Flat binary checkpoint container.

Layout, all little-endian:

    magic    8 bytes  b"WECFA001"
    version  u32
    crc32    u32      over everything that follows
    config   u32 byte length + UTF-8 JSON object
    count    u32      number of named blocks
    blocks   per block: u32 name length, name UTF-8, u8 ndim,
             ndim * u32 dims, float64 payload (C order)

Round trips are bit exact: payloads are raw float64 bytes, never text.
"""

import json
import struct
import zlib

import numpy as np

from ..errors import CheckpointError

MAGIC = b"WECFA001"
VERSION = 1


def _pack_blocks(config, arrays):
    parts = []
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            parts.append(struct.pack("<I", dim))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def save_checkpoint(path, config, arrays):
    """Write config (JSON-serializable dict) and named float64 arrays."""
    body = _pack_blocks(config, arrays)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", crc))
        fh.write(body)


def load_checkpoint(path):
    """Read a checkpoint; returns (config dict, name -> float64 array)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version = struct.unpack_from("<I", raw, 8)[0]
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    crc_stored = struct.unpack_from("<I", raw, 12)[0]
    body = raw[16:]
    crc_actual = zlib.crc32(body) & 0xFFFFFFFF
    if crc_actual != crc_stored:
        raise CheckpointError(f"{path}: integrity check failed (corrupted file)")

    offset = 0

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(body):
            raise CheckpointError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, body, offset)
        offset += size
        return vals if len(vals) > 1 else vals[0]

    cfg_len = take("<I")
    config = json.loads(body[offset : offset + cfg_len].decode("utf-8"))
    offset += cfg_len
    count = take("<I")
    arrays = {}
    for _ in range(count):
        name_len = take("<I")
        name = body[offset : offset + name_len].decode("utf-8")
        offset += name_len
        ndim = take("<B")
        shape = tuple(take("<I") for _ in range(ndim)) if ndim else ()
        n_items = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n_items
        if offset + nbytes > len(body):
            raise CheckpointError(f"{path}: truncated block {name}")
        arr = np.frombuffer(body, dtype="<f8", count=n_items, offset=offset)
        offset += nbytes
        arrays[name] = arr.reshape(shape).astype(np.float64, copy=True)
    return config, arrays


def rng_state_to_array(generator):
    """Bit-preserving snapshot of a numpy Generator (PCG64) as float64."""
    state = generator.bit_generator.state
    words = []
    for value in (state["state"]["state"], state["state"]["inc"]):
        words.append(value & 0xFFFFFFFFFFFFFFFF)
        words.append((value >> 64) & 0xFFFFFFFFFFFFFFFF)
    words.append(1 if state["has_uint32"] else 0)
    words.append(state["uinteger"] & 0xFFFFFFFF)
    return np.array(words, dtype=np.uint64).view(np.float64)


def array_to_rng_state(generator, array):
    """Restore a Generator from rng_state_to_array output."""
    words = np.asarray(array, dtype=np.float64).view(np.uint64)
    if words.size != 6:
        raise CheckpointError("rng state block has wrong size")
    state = generator.bit_generator.state
    state["state"]["state"] = int(words[0]) | (int(words[1]) << 64)
    state["state"]["inc"] = int(words[2]) | (int(words[3]) << 64)
    state["has_uint32"] = int(words[4])
    state["uinteger"] = int(words[5])
    generator.bit_generator.state = state
