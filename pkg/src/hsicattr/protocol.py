"""NDJSON framing for external model endpoints.

One JSON document per ``\\n``-terminated line, compact separators, floats in
shortest round-trip form::

    request:  {"id": 3, "shape": [H, W, C], "inputs": [[...], ...]}
    response: {"id": 3, "outputs": [[...], ...]}

Each input is flattened row-major; ``shape`` gives its unflattened shape.
"""

from __future__ import annotations

import json
import math

import numpy as np


class ProtocolError(ValueError):
    """A line that does not follow the framing or the message schema."""


def _dump(obj) -> bytes:
    return (json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")


def encode_request(request_id: int, inputs) -> bytes:
    batch = np.asarray(inputs, dtype=np.float64)
    if batch.ndim < 2:
        raise ValueError("request inputs must be a batch with a leading axis")
    flat = batch.reshape(batch.shape[0], -1)
    return _dump({"id": int(request_id), "shape": list(batch.shape[1:]), "inputs": flat.tolist()})


def _load(line) -> dict:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"response is not UTF-8: {exc}") from None
    if not line.endswith("\n"):
        raise ProtocolError("message is not newline-terminated")
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("message is not a JSON object")
    return obj


def _float_rows(rows, key: str) -> list:
    if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
        raise ProtocolError(f"{key!r} must be a list of lists")
    for row in rows:
        for v in row:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ProtocolError(f"non-numeric value in {key!r}: {v!r}")
            if not math.isfinite(v):
                raise ProtocolError(f"non-finite value in {key!r}")
    return rows


def decode_request(line) -> tuple[int, np.ndarray]:
    obj = _load(line)
    if not isinstance(obj.get("id"), int):
        raise ProtocolError("request id must be an integer")
    rows = _float_rows(obj.get("inputs"), "inputs")
    shape = obj.get("shape")
    batch = np.asarray(rows, dtype=np.float64).reshape(len(rows), -1)
    if isinstance(shape, list) and shape and batch.size:
        batch = batch.reshape((len(rows), *shape))
    return obj["id"], batch


def encode_response(request_id: int, outputs) -> bytes:
    out = np.asarray(outputs, dtype=np.float64)
    if out.ndim == 1:
        out = out[:, None]
    return _dump({"id": int(request_id), "outputs": out.tolist()})


def decode_response(line, expected_id: int, expected_n: int) -> np.ndarray:
    obj = _load(line)
    if obj.get("id") != expected_id:
        raise ProtocolError(f"response id {obj.get('id')!r} does not match request id {expected_id}")
    rows = _float_rows(obj.get("outputs"), "outputs")
    if len(rows) != expected_n:
        raise ProtocolError(f"got {len(rows)} outputs for {expected_n} inputs")
    widths = {len(r) for r in rows}
    if len(widths) != 1 or 0 in widths:
        raise ProtocolError("output vectors must be non-empty and of equal length")
    return np.asarray(rows, dtype=np.float64)
