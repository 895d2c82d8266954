"""Deterministic synthetic backend for tests and benchmarks.

No neural network: logits and attention are closed-form functions of the
image pixels, the consumed token history, and a session seed, so every
output is reproducible bit-for-bit on any platform. The exact formulas
are documented in docs/synthetic-backend.md; in short:

* the image is pooled onto an 8x8 brightness grid, one cell per vocab
  entry, so bright regions push specific tokens up;
* a cosine term varies logits with the stream position;
* an FNV-1a hash of (seed, history, token) adds a reproducible
  pseudo-random component;
* at the first generated position, "yes" gets a large bonus on bright
  images and "no" on dark ones, which makes yes/no evaluations
  designable from pixels alone;
* attention rows are per-patch brightness raised to a power that varies
  by layer, head, and position, then normalized.

Logits are computed in float64 and cast to float32 so the in-process and
wire-transported paths agree exactly.
"""

from __future__ import annotations

import math

import numpy as np

from ..attention import AttentionStack
from ..errors import BackendError, InputError
from ..imaging import to_grayscale, validate_image
from .base import KIND_ORIGINAL, KIND_SUB, BackendSession, SessionInfo, StepOutput, StreamHandle

VOCAB_SIZE = 64
GRID_SIDE = 24
LAYER_COUNT = 4
HEAD_COUNT = 4
EOS_TOKEN = 0
YES_TOKEN = 1
NO_TOKEN = 2

BRIGHTNESS_GAIN = 4.0
POSITION_GAIN = 1.5
HASH_GAIN = 0.5
ANSWER_BIAS = 8.0
ATTN_FLOOR = 1e-3

_OBJECT_WORDS = [
    "dog", "cat", "car", "chair", "person", "bird", "horse", "boat",
    "bottle", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple",
    "pizza", "couch", "bed", "tv", "laptop", "mouse", "keyboard", "book",
    "clock", "vase", "toilet", "sink", "bench", "truck",
]
_FILLER_WORDS = [
    "a", "the", "on", "in", "with", "and", "of", "is", "are", "there",
    "this", "that", "it", "an", "at", "by", "near", "under", "over",
    "beside", "some", "many", "one", "two", "three", "white", "black",
    "small", "large", "still",
]
VOCAB_WORDS = ["<eos>", "yes", "no"] + _OBJECT_WORDS + _FILLER_WORDS + ["."]
assert len(VOCAB_WORDS) == VOCAB_SIZE

_WORD_TO_TOKEN = {w: i for i, w in enumerate(VOCAB_WORDS)}

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def _fnv1a(data: bytes, state: int = _FNV_OFFSET) -> int:
    for b in data:
        state = ((state ^ b) * _FNV_PRIME) & _MASK64
    return state


def _hash_unit(state: int, value: int) -> float:
    """Finalize a hash with one value and map to [-1, 1)."""
    h = _fnv1a(value.to_bytes(4, "little"), state)
    return (h / 2.0**64) * 2.0 - 1.0


def _cell_means(gray: np.ndarray, side: int) -> np.ndarray:
    """Mean brightness over a side x side grid of cells; bins never empty."""
    h, w = gray.shape
    out = np.empty((side, side), dtype=np.float64)
    for i in range(side):
        lo_y = (i * h) // side
        hi_y = max(((i + 1) * h) // side, lo_y + 1)
        for j in range(side):
            lo_x = (j * w) // side
            hi_x = max(((j + 1) * w) // side, lo_x + 1)
            out[i, j] = gray[lo_y:hi_y, lo_x:hi_x].mean()
    return out


class _StreamState:
    __slots__ = ("kind", "tile_index", "prompt_len", "history", "bucket", "patch", "bright")

    def __init__(self, image: np.ndarray, prompt: list[int], kind: str, tile_index):
        gray = to_grayscale(image)
        grid = math.isqrt(VOCAB_SIZE - 1) + 1  # 8 for a 64-token vocabulary
        self.bucket = _cell_means(gray, grid).reshape(-1)[:VOCAB_SIZE]
        self.patch = _cell_means(gray, GRID_SIDE)
        self.bright = float(gray.mean())
        self.kind = kind
        self.tile_index = tile_index
        self.prompt_len = len(prompt)
        self.history = list(prompt)


class SyntheticSession(BackendSession):
    """In-process synthetic backend; reentrant and thread-safe per stream."""

    def __init__(self, options: dict | None = None):
        options = dict(options or {})
        self._seed = int(options.pop("seed", 0))
        if options:
            raise BackendError(f"unknown synthetic backend options: {sorted(options)}")
        self._info = SessionInfo(
            vocab_size=VOCAB_SIZE,
            grid_side=GRID_SIDE,
            layer_count=LAYER_COUNT,
            head_count=HEAD_COUNT,
            eos_token=EOS_TOKEN,
            deterministic=True,
        )
        self._streams: dict[int, _StreamState] = {}
        self._next_id = 1
        self._open = True

    @property
    def info(self) -> SessionInfo:
        return self._info

    def _require_open(self):
        if not self._open:
            raise BackendError("session is closed")

    def init_stream(self, image, prompt, kind, tile_index=None) -> StreamHandle:
        self._require_open()
        validate_image(image)
        if kind not in (KIND_ORIGINAL, KIND_SUB):
            raise InputError(f"unknown stream kind {kind!r}")
        if not prompt:
            raise InputError("prompt must contain at least one token")
        for t in prompt:
            self._check_token(t)
        sid = self._next_id
        self._next_id += 1
        self._streams[sid] = _StreamState(image, prompt, kind, tile_index)
        return StreamHandle(stream_id=sid, kind=kind, tile_index=tile_index, position=len(prompt))

    def _check_token(self, token: int):
        if not isinstance(token, (int, np.integer)) or isinstance(token, bool):
            raise InputError(f"token id must be an integer, got {token!r}")
        if not 0 <= token < VOCAB_SIZE:
            raise InputError(f"token id {token} outside vocabulary of {VOCAB_SIZE}")

    def step(self, handle: StreamHandle, token: int | None) -> StepOutput:
        self._require_open()
        state = self._streams.get(handle.stream_id)
        if state is None:
            raise BackendError(f"stream {handle.stream_id} is not live")
        if token is not None:
            self._check_token(token)
            state.history.append(int(token))
            handle.position = len(state.history)
        logits = self._logits(state)
        attention = self._attention(state) if state.kind == KIND_ORIGINAL else None
        return StepOutput(logits=logits, attention=attention)

    def _logits(self, state: _StreamState) -> np.ndarray:
        pos = len(state.history)
        generated = pos - state.prompt_len
        hist_hash = _fnv1a(self._seed.to_bytes(8, "little", signed=True))
        for t in state.history:
            hist_hash = _fnv1a(t.to_bytes(4, "little"), hist_hash)

        w = np.arange(VOCAB_SIZE, dtype=np.float64)
        logits = BRIGHTNESS_GAIN * state.bucket
        logits = logits + POSITION_GAIN * np.cos(2.0 * np.pi * (w + 1) * (pos + 1) / VOCAB_SIZE)
        logits = logits + HASH_GAIN * np.array(
            [_hash_unit(hist_hash, int(v)) for v in range(VOCAB_SIZE)]
        )
        if generated == 0:
            answer = YES_TOKEN if state.bright >= 0.5 else NO_TOKEN
            logits[answer] += ANSWER_BIAS
        return logits.astype(np.float32)

    def _attention(self, state: _StreamState) -> AttentionStack:
        pos = len(state.history)
        base = state.patch + ATTN_FLOOR
        rows = np.empty((LAYER_COUNT, HEAD_COUNT, GRID_SIDE * GRID_SIDE), dtype=np.float64)
        for layer in range(LAYER_COUNT):
            for head in range(HEAD_COUNT):
                power = (
                    1.0
                    + layer / (2.0 * LAYER_COUNT)
                    + head / (4.0 * HEAD_COUNT)
                    + (pos % 8) / 16.0
                )
                row = np.power(base, power).reshape(-1)
                rows[layer, head] = row / row.sum()
        return AttentionStack(rows=rows.astype(np.float32), grid_side=GRID_SIDE)

    def close_stream(self, handle: StreamHandle) -> None:
        self._require_open()
        if handle.stream_id not in self._streams:
            raise BackendError(f"stream {handle.stream_id} is not live")
        del self._streams[handle.stream_id]

    def tokenize(self, text: str) -> list[int]:
        tokens = []
        for raw in text.lower().split():
            word = raw.strip(".,!?;:'\"()")
            if not word:
                word = "."
            tok = _WORD_TO_TOKEN.get(word)
            if tok is None:
                tok = 3 + _fnv1a(word.encode("utf-8")) % (VOCAB_SIZE - 3)
            tokens.append(tok)
        return tokens

    def detokenize(self, tokens: list[int]) -> str:
        words = []
        for t in tokens:
            self._check_token(t)
            if t == EOS_TOKEN:
                continue
            words.append(VOCAB_WORDS[t])
        return " ".join(words)

    def close(self) -> None:
        self._streams.clear()
        self._open = False
