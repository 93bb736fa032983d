"""Self-describing binary checkpoints: magic, u64 header length, JSON header, f64 sections."""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"FBCPRCK\x00"
FORMAT_VERSION = 1


class CheckpointVersionError(ValueError):
    pass


def save_checkpoint(path, meta: dict, blocks: dict[str, np.ndarray]):
    """Write ``blocks`` as little-endian float64 sections after a JSON header.

    ``meta`` must be JSON-serializable; it is stored under the "meta" key.
    """
    entries, offset = [], 0
    arrays = []
    for name in sorted(blocks):
        arr = np.ascontiguousarray(blocks[name], dtype="<f8")
        entries.append({"name": name, "offset": offset, "shape": list(arr.shape)})
        offset += arr.nbytes
        arrays.append(arr)
    header = json.dumps({"format_version": FORMAT_VERSION, "meta": meta, "blocks": entries},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for arr in arrays:
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Returns (meta, blocks). Raises CheckpointVersionError on a format mismatch."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointVersionError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(raw[start : start + hlen])
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint format {header.get('format_version')} is not supported (expected {FORMAT_VERSION})")
    data = raw[start + hlen :]
    blocks = {}
    for e in header["blocks"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=e["offset"])
        blocks[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return header["meta"], blocks
