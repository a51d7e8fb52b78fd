"""Wire format: one JSON object per line, protocol version 1.

Message kinds: ``hello``, ``explain_request``, ``predict_request``,
``predict_response``, ``attributions``, ``error``. Every message carries a
correlation ``id``; a request's id is answered exactly once. Matrices are
row-major nested arrays. Numbers travel as decimal strings produced by
``repr`` (shortest float round-trip), so values survive the pipe
bit-exactly.
"""

from __future__ import annotations

import json

import numpy as np

PROTOCOL_VERSION = 1

KINDS = (
    "hello",
    "explain_request",
    "predict_request",
    "predict_response",
    "attributions",
    "error",
)


class ProtocolError(RuntimeError):
    pass


def encode_vector(values) -> list[str]:
    return [repr(float(v)) for v in np.asarray(values, dtype=np.float64)]


def decode_vector(values) -> np.ndarray:
    return np.array([float(v) for v in values], dtype=np.float64)


def encode_matrix(rows) -> list[list[str]]:
    return [encode_vector(row) for row in np.asarray(rows, dtype=np.float64)]


def decode_matrix(rows) -> np.ndarray:
    if not rows:
        return np.empty((0, 0))
    return np.vstack([decode_vector(row) for row in rows])


def message(kind: str, msg_id: int, payload: dict | None = None, **extra) -> dict:
    if kind not in KINDS:
        raise ProtocolError(f"unknown message kind {kind!r}")
    out = {"kind": kind, "id": int(msg_id)}
    if payload is not None:
        out["payload"] = payload
    out.update(extra)
    return out


def hello(msg_id: int = 0) -> dict:
    return message("hello", msg_id, version=PROTOCOL_VERSION)


def dump_line(msg: dict) -> str:
    return json.dumps(msg, separators=(",", ":"))


def parse_line(line: str) -> dict:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed line: {line[:120]!r}") from exc
    if not isinstance(msg, dict) or "kind" not in msg or "id" not in msg:
        raise ProtocolError(f"message missing kind/id: {line[:120]!r}")
    if msg["kind"] not in KINDS:
        raise ProtocolError(f"unknown message kind {msg['kind']!r}")
    return msg
