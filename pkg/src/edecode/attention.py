"""Reduce raw multi-layer attention to per-tile weights.

Three stages, run once per decode step on the original-image stream's
attention rows:

1. refine: pick the strongest layers, average them, pick the strongest
   heads inside the result, average again, reshape to the d x d patch grid;
2. aggregate: sum the refined map over each tile's patch region (overlap
   patches count toward every region they sit in);
3. weight: temperature softmax over the region scores, yielding a simplex
   vector over tiles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .tiling import RegionMap


@dataclass(frozen=True)
class AttentionStack:
    """Per-layer, per-head attention rows over the image-patch key positions.

    rows has shape (layers, heads, d*d); entries are the non-negative
    attention mass the current query position puts on each image patch.
    """

    rows: np.ndarray
    grid_side: int

    def __post_init__(self):
        if self.rows.ndim != 3:
            raise InputError(f"attention rows must be 3-D, got shape {self.rows.shape}")
        layers, heads, patches = self.rows.shape
        if layers < 1 or heads < 1:
            raise InputError("attention stack needs at least one layer and head")
        if patches != self.grid_side * self.grid_side:
            raise InputError(
                f"row length {patches} does not match grid {self.grid_side}x{self.grid_side}"
            )
        if not np.isfinite(self.rows).all() or (self.rows < 0).any():
            raise InputError("attention rows must be finite and non-negative")

    @property
    def layer_count(self) -> int:
        return int(self.rows.shape[0])

    @property
    def head_count(self) -> int:
        return int(self.rows.shape[1])


def _top_indices(means: np.ndarray, count: int) -> np.ndarray:
    # stable sort on negated means: ties break toward the lower index
    return np.argsort(-means, kind="stable")[:count]


def refine_attention(stack: AttentionStack, top_layers: int, top_heads: int) -> np.ndarray:
    """Collapse (layers, heads, d*d) rows into a single d x d map.

    Layers are ranked by their mean over heads and patches; the top
    `top_layers` are averaged elementwise into one representative layer.
    Heads within it are then ranked by their mean over patches and the top
    `top_heads` averaged. Ranking ties break toward the lower index.
    """
    if not 1 <= top_layers <= stack.layer_count:
        raise ConfigError(
            f"top_layers must be in [1, {stack.layer_count}], got {top_layers}"
        )
    if not 1 <= top_heads <= stack.head_count:
        raise ConfigError(f"top_heads must be in [1, {stack.head_count}], got {top_heads}")

    rows = stack.rows.astype(np.float64)
    layer_means = rows.mean(axis=(1, 2))
    representative = rows[_top_indices(layer_means, top_layers)].mean(axis=0)

    head_means = representative.mean(axis=1)
    refined = representative[_top_indices(head_means, top_heads)].mean(axis=0)
    return refined.reshape(stack.grid_side, stack.grid_side)


def aggregate_regions(refined: np.ndarray, regions: RegionMap) -> np.ndarray:
    """Sum the refined map over each region's patches; returns (N,) scores."""
    d = regions.grid_side
    if refined.shape != (d, d):
        raise ConfigError(
            f"refined map shape {refined.shape} does not match region grid {d}x{d}"
        )
    return (regions.membership * refined[None, :, :].astype(np.float64)).sum(axis=(1, 2))


def attention_weights(scores: np.ndarray, tau: float) -> np.ndarray:
    """Temperature softmax of region scores, computed with max-subtraction.

    Stable at tau down to 1e-6 with arbitrary score spreads; the result is
    on the simplex and invariant to constant shifts of the scores.
    """
    if tau <= 0:
        raise ConfigError(f"softmax temperature must be positive, got {tau}")
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 1:
        raise InputError(f"scores must be a non-empty vector, got shape {s.shape}")
    if not np.isfinite(s).all():
        raise InputError("scores must be finite")
    z = np.exp((s - s.max()) / tau)
    return z / z.sum()
