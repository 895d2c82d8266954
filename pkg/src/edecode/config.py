"""Decoding configuration and its validation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError

MODES = ("ed", "fasted", "regular")
SAMPLING = ("greedy", "multinomial")

# softmax temperature regimes: sharp for short answers, near-argmax for captions
TAU_SHORT_ANSWER = 1e-2
TAU_LONG_ANSWER = 1e-4


@dataclass
class DecodeConfig:
    """Everything a generation run needs beyond the image and prompt.

    Defaults follow the engine's reference operating point: a 2x2 grid of
    336-px tiles, equal blend weight, half-strength truncation, the top 3
    layers/heads for attention refinement, and the short-answer softmax
    temperature.
    """

    num_tiles: int = 4
    tile_size: int = 336
    alpha: float = 0.5
    beta: float = 0.5
    tau: float = TAU_SHORT_ANSWER
    top_layers: int = 3
    top_heads: int = 3
    mode: str = "ed"
    sampling: str = "multinomial"
    seed: int = 0
    max_tokens: int = 64
    weighted_lhs: bool = False
    renormalize: bool = True

    def validate(self) -> "DecodeConfig":
        if self.num_tiles < 1 or math.isqrt(self.num_tiles) ** 2 != self.num_tiles:
            raise ConfigError(f"num_tiles must be a perfect square >= 1, got {self.num_tiles}")
        if self.tile_size < 1:
            raise ConfigError(f"tile_size must be positive, got {self.tile_size}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.top_layers < 1:
            raise ConfigError(f"top_layers must be >= 1, got {self.top_layers}")
        if self.top_heads < 1:
            raise ConfigError(f"top_heads must be >= 1, got {self.top_heads}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.sampling not in SAMPLING:
            raise ConfigError(f"sampling must be one of {SAMPLING}, got {self.sampling!r}")
        if self.max_tokens < 0:
            raise ConfigError(f"max_tokens must be >= 0, got {self.max_tokens}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DecodeConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data).validate()
