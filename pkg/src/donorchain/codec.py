"""Canonical encodings shared across the ledger stack.

Every hash and signature in the system is computed over bytes produced
here, so encodings must stay stable: JSON with lexicographically sorted
keys and no insignificant whitespace, binary values as lowercase hex.
"""

import hashlib
import json
from typing import Any, BinaryIO, Iterator

ZERO_HASH = bytes(32)

# 4-byte big-endian length prefix caps a single record at 4 GiB.
_FRAME_LEN_BYTES = 4


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_json_bytes(obj: Any) -> bytes:
    return canonical_json(obj).encode("utf-8")


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def write_frame(fh: BinaryIO, payload: bytes) -> None:
    fh.write(len(payload).to_bytes(_FRAME_LEN_BYTES, "big"))
    fh.write(payload)


def read_frame(fh: BinaryIO) -> bytes | None:
    """Read one length-prefixed record; None at clean EOF."""
    header = fh.read(_FRAME_LEN_BYTES)
    if not header:
        return None
    if len(header) < _FRAME_LEN_BYTES:
        raise ValueError("truncated frame header")
    length = int.from_bytes(header, "big")
    payload = fh.read(length)
    if len(payload) < length:
        raise ValueError("truncated frame payload")
    return payload


def read_frames(fh: BinaryIO) -> Iterator[bytes]:
    while True:
        payload = read_frame(fh)
        if payload is None:
            return
        yield payload
