"""Model-backend contract.

A backend holds one autoregressive *stream* per conditioning context
(one image + prompt + generated prefix) and returns next-token logits on
each step. Attention rows over the image-patch grid travel back only for
the original-image stream; tile streams return logits alone.

Step semantics: ``step(handle, token)`` appends ``token`` to the stream's
context and returns the distribution for the following position.
``step(handle, None)`` returns the distribution at the current position
without appending — the prefill read issued once right after
``init_stream``.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from ..attention import AttentionStack

KIND_ORIGINAL = "original"
KIND_SUB = "sub"


@dataclass(frozen=True)
class SessionInfo:
    """Capabilities negotiated when a session opens."""

    vocab_size: int
    grid_side: int
    layer_count: int
    head_count: int
    eos_token: int
    deterministic: bool = True


@dataclass
class StreamHandle:
    """Engine-side view of one backend stream.

    position counts engine-supplied tokens consumed (prompt plus appended
    generations); it never decreases.
    """

    stream_id: int
    kind: str
    tile_index: int | None
    position: int


@dataclass(frozen=True)
class StepOutput:
    """Logits (and, for the original stream, attention rows) for one step."""

    logits: np.ndarray  # float32, shape (vocab,)
    attention: AttentionStack | None


class BackendSession(ABC):
    """One connection to a model backend; create via open_session()."""

    @property
    @abstractmethod
    def info(self) -> SessionInfo: ...

    @abstractmethod
    def init_stream(
        self,
        image: np.ndarray,
        prompt: list[int],
        kind: str,
        tile_index: int | None = None,
    ) -> StreamHandle: ...

    @abstractmethod
    def step(self, handle: StreamHandle, token: int | None) -> StepOutput: ...

    @abstractmethod
    def close_stream(self, handle: StreamHandle) -> None: ...

    @abstractmethod
    def tokenize(self, text: str) -> list[int]: ...

    @abstractmethod
    def detokenize(self, tokens: list[int]) -> str: ...

    @abstractmethod
    def close(self) -> None: ...

    def __enter__(self) -> "BackendSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
