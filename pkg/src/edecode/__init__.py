"""Attention-guided ensemble decoding over tiled images, plus evaluation tooling."""

from .attention import AttentionStack, aggregate_regions, attention_weights, refine_attention
from .backend import open_session
from .config import DecodeConfig, TAU_LONG_ANSWER, TAU_SHORT_ANSWER
from .decoder import GenerationResult, StepTrace, generate, sample
from .ensemble import apply_mask, ed_plausibility_mask, ensemble_logits, fast_ed, softmax
from .errors import BackendError, ConfigError, EDecodeError, InputError, InternalError
from .tiling import RegionMap, TileSet, build_region_map, split_image

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "AttentionStack",
    "DecodeConfig",
    "GenerationResult",
    "RegionMap",
    "StepTrace",
    "TileSet",
    "TAU_LONG_ANSWER",
    "TAU_SHORT_ANSWER",
    "aggregate_regions",
    "apply_mask",
    "attention_weights",
    "build_region_map",
    "ed_plausibility_mask",
    "ensemble_logits",
    "fast_ed",
    "generate",
    "open_session",
    "refine_attention",
    "sample",
    "softmax",
    "split_image",
    "BackendError",
    "ConfigError",
    "EDecodeError",
    "InputError",
    "InternalError",
]
