"""Newline-delimited JSON wire protocol (proto_version 1).

One JSON object per line in each direction; the client sends a request,
the server answers with exactly one response, in order. Numeric tensors
travel as base64-encoded little-endian arrays (float32 for logits and
attention rows, uint8 for image pixels), which keeps the transport
bit-exact and trivially implementable from any language.

Full message reference: docs/protocol.md. A golden request/response
corpus for conformance testing ships in backend/data/conformance_corpus.json.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from ..errors import BackendError

PROTO_VERSION = 1

REQUEST_TYPES = ("hello", "init_stream", "step", "close_stream", "tokenize", "detokenize", "close")
RESPONSE_TYPES = ("hello_ack", "init_ack", "step_out", "stream_closed", "tokens", "text", "bye", "error")


def encode_f32(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def decode_f32(data: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(data), dtype="<f4").copy()


def encode_u8(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype=np.uint8).tobytes()).decode("ascii")


def decode_u8(data: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(data), dtype=np.uint8).copy()


def encode_image(pixels: np.ndarray) -> dict:
    h, w, c = pixels.shape
    return {"height": h, "width": w, "channels": c, "pixels": encode_u8(pixels)}


def decode_image(obj: dict) -> np.ndarray:
    try:
        h, w, c = int(obj["height"]), int(obj["width"]), int(obj["channels"])
        flat = decode_u8(obj["pixels"])
    except (KeyError, TypeError, ValueError) as exc:
        raise BackendError(f"malformed image payload: {exc}") from None
    if flat.size != h * w * c:
        raise BackendError(
            f"image payload has {flat.size} bytes, expected {h}x{w}x{c}"
        )
    return flat.reshape(h, w, c)


def dump_line(message: dict) -> str:
    return json.dumps(message, separators=(",", ":"), sort_keys=True)


def parse_line(line: str) -> dict:
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        raise BackendError(f"invalid protocol line: {exc}") from None
    if not isinstance(message, dict) or "type" not in message:
        raise BackendError("protocol message must be an object with a 'type' field")
    return message
