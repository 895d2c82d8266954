"""Minimal wire helpers for the backend protocol (proto_version 1).

Kept dependency-free on purpose: the adapter speaks to the decoding
engine only through this protocol, never through its Python API.
"""

from __future__ import annotations

import base64
import json

import numpy as np

PROTO_VERSION = 1


class WireError(Exception):
    """Protocol-level failure; `code` travels back in the error message."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def encode_f32(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def decode_image(obj: dict) -> np.ndarray:
    try:
        h, w, c = int(obj["height"]), int(obj["width"]), int(obj["channels"])
        flat = np.frombuffer(base64.b64decode(obj["pixels"]), dtype=np.uint8)
    except (KeyError, TypeError, ValueError) as exc:
        raise WireError("protocol", f"malformed image payload: {exc}") from None
    if h < 1 or w < 1 or c not in (1, 3):
        raise WireError("input", f"bad image dimensions {h}x{w}x{c}")
    if flat.size != h * w * c:
        raise WireError("protocol", f"image payload has {flat.size} bytes, expected {h * w * c}")
    return flat.reshape(h, w, c).copy()


def dump_line(message: dict) -> str:
    return json.dumps(message, separators=(",", ":"), sort_keys=True)


def parse_line(line: str) -> dict:
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireError("protocol", f"invalid protocol line: {exc}") from None
    if not isinstance(message, dict) or "type" not in message:
        raise WireError("protocol", "protocol message must be an object with a 'type' field")
    return message
