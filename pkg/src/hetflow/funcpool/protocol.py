"""Intake-channel wire format for the function pool.

Every frame is:

    byte 0       protocol version (currently 0x01)
    bytes 1-4    big-endian unsigned length N of the body
    bytes 5..    N bytes of UTF-8 JSON (canonical: sorted keys, no spaces)

Invocation bodies look like ``{"args": [...], "function": "name", "k": 4,
"type": "invoke", "uid": "task.000001"}``; result bodies carry
``{"ranks": [...per-rank blobs...], "status": "ok"|"error", ...}``.
The same framing carries the pool's internal messages over the socket
transport.
"""

from __future__ import annotations

import json
import struct

PROTOCOL_VERSION = 1
_HEADER = struct.Struct(">BI")


class ProtocolError(Exception):
    pass


def encode_frame(body: dict) -> bytes:
    payload = json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(PROTOCOL_VERSION, len(payload)) + payload


def decode_frame(frame: bytes) -> dict:
    if len(frame) < _HEADER.size:
        raise ProtocolError(f"frame shorter than header ({len(frame)} bytes)")
    version, length = _HEADER.unpack_from(frame)
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    body = frame[_HEADER.size:]
    if len(body) != length:
        raise ProtocolError(f"length mismatch: header says {length}, got {len(body)}")
    return json.loads(body.decode("utf-8"))


def invocation_frame(uid: str, function: str, args, k: int) -> bytes:
    return encode_frame({"type": "invoke", "uid": uid, "function": function,
                         "args": list(args), "k": k})


def result_frame(uid: str, status: str, ranks: list, error: str | None = None) -> bytes:
    return encode_frame({"type": "result", "uid": uid, "status": status,
                         "ranks": ranks, "error": error})


def read_frame(stream) -> dict | None:
    """Read one frame from a file-like byte stream; None on clean EOF."""
    header = stream.read(_HEADER.size)
    if not header:
        return None
    if len(header) < _HEADER.size:
        raise ProtocolError("truncated frame header")
    version, length = _HEADER.unpack(header)
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    body = b""
    while len(body) < length:
        chunk = stream.read(length - len(body))
        if not chunk:
            raise ProtocolError("truncated frame body")
        body += chunk
    return json.loads(body.decode("utf-8"))
