"""Adapter configuration."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class AdapterConfig:
    """How to load and serve one model.

    prompt_template wraps the text handed to `tokenize`; the image block
    ([bos] + one placeholder per vision patch) is prepended by
    `init_stream`, so the template itself contains no image marker.
    attn_query_row selects which query position's attention row is
    reported (-1: the most recent position).
    """

    model_path: str = ""
    device: str = "cpu"
    dtype: str = "float32"
    max_streams: int = 16
    attn_query_row: int = -1
    prompt_template: str = "USER: {text} ASSISTANT:"
    seed: int = 0
    deterministic: bool = True

    def validate(self) -> "AdapterConfig":
        if not self.model_path:
            raise ValueError("model_path is required")
        if self.max_streams < 5:
            # the engine drives one original stream plus at least 4 tiles
            raise ValueError(f"max_streams must be >= 5, got {self.max_streams}")
        if self.dtype not in ("float32", "float16", "bfloat16"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        if "{text}" not in self.prompt_template:
            raise ValueError("prompt_template must contain {text}")
        return self
