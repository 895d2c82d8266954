"""Split an image into an even grid of fixed-size overlapping tiles.

The decoder conditions one backend stream per tile plus one on the full
image; this module owns the geometry. With the default 2x2 grid of
336-px tiles, inputs whose longest side exceeds 672 px are first squashed
to 448x448 so that adjacent tiles share overlap instead of cutting
objects apart.

Tile indices are 0-based and row-major over the grid (left-to-right,
top-to-bottom); offsets are (x, y) pixel coordinates of each tile's
top-left corner in the (possibly resized) original.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InternalError
from .imaging import bilinear_resize, validate_image


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class TileSet:
    """The (possibly resized) original plus its N square tiles."""

    original: np.ndarray
    tiles: list[np.ndarray]
    offsets: list[tuple[int, int]]
    tile_size: int

    @property
    def num_tiles(self) -> int:
        return len(self.tiles)

    def debug_dict(self, regions: "RegionMap | None" = None) -> dict:
        """JSON-ready summary: offsets, sizes, region membership counts."""
        out = {
            "original_height": int(self.original.shape[0]),
            "original_width": int(self.original.shape[1]),
            "tile_size": self.tile_size,
            "offsets": [list(o) for o in self.offsets],
            "tile_shapes": [list(t.shape) for t in self.tiles],
        }
        if regions is not None:
            counts = regions.membership.sum(axis=(1, 2))
            out["grid_side"] = regions.grid_side
            out["region_patch_counts"] = [int(n) for n in counts]
        return out


@dataclass(frozen=True)
class RegionMap:
    """Which tiles contain each patch of the d x d attention grid.

    membership[k, i, j] is True when patch (i, j)'s center falls inside
    tile k's pixel extent. Patches in overlap zones belong to several
    regions and are double-counted downstream by design.
    """

    grid_side: int
    membership: np.ndarray  # bool, shape (N, d, d)

    def __post_init__(self):
        if not self.membership.any(axis=0).all():
            raise InternalError("region map leaves a patch with no region")

    @property
    def num_regions(self) -> int:
        return int(self.membership.shape[0])


def _target_size(h: int, w: int, tile: int, grid: int) -> tuple[int, int]:
    """Decide the pre-tiling resize target for an h x w image.

    A grid x grid layout of `tile`-px tiles can span at most grid*tile px
    per axis, so anything longer is squashed to the square working size
    (4/3 of a tile per side, 448 for 336-px tiles). Images with a short
    side under one tile are upscaled, aspect preserved, until the short
    side is exactly one tile; if that would push the long side past the
    coverable span, the square working size is used instead.
    """
    square = (_round_half_up(4 * tile / 3),) * 2
    if grid == 1:
        return tile, tile
    span = grid * tile
    if max(h, w) > span:
        return square
    if min(h, w) < tile:
        if h <= w:
            th, tw = tile, _round_half_up(w * tile / h)
        else:
            th, tw = _round_half_up(h * tile / w), tile
        if max(th, tw) > span:
            return square
        return th, tw
    return h, w


def _axis_offsets(dim: int, tile: int, grid: int) -> list[int]:
    """Even anchor points: round(i * (dim - tile) / (grid - 1)), i = 0..grid-1."""
    if grid == 1:
        return [0]
    return [_round_half_up(i * (dim - tile) / (grid - 1)) for i in range(grid)]


def split_image(image: np.ndarray, num_tiles: int, tile_size: int) -> TileSet:
    """Resize as needed, then cut an even sqrt(N) x sqrt(N) grid of tiles.

    num_tiles must be a perfect square; every emitted tile is exactly
    tile_size x tile_size and the union of tile extents covers the
    resized original.
    """
    grid = math.isqrt(num_tiles)
    if grid * grid != num_tiles or num_tiles < 1:
        raise ConfigError(f"tile count must be a perfect square, got {num_tiles}")
    if tile_size < 1:
        raise ConfigError(f"tile size must be positive, got {tile_size}")
    arr = validate_image(image)

    h, w, _ = arr.shape
    th, tw = _target_size(h, w, tile_size, grid)
    original = arr if (th, tw) == (h, w) else bilinear_resize(arr, th, tw)

    ys = _axis_offsets(th, tile_size, grid)
    xs = _axis_offsets(tw, tile_size, grid)
    offsets = [(x, y) for y in ys for x in xs]
    tiles = [original[y : y + tile_size, x : x + tile_size].copy() for x, y in offsets]
    for t in tiles:
        if t.shape[:2] != (tile_size, tile_size):
            raise InternalError(f"tile has shape {t.shape[:2]}, wanted {tile_size} square")
    return TileSet(original=original, tiles=tiles, offsets=offsets, tile_size=tile_size)


def build_region_map(tile_set: TileSet, grid_side: int) -> RegionMap:
    """Assign each patch of the d x d grid to every tile containing its center.

    Patch (i, j) has its center at ((j + 0.5) * W / d, (i + 0.5) * H / d)
    in original-pixel coordinates; containment is the half-open extent
    [offset, offset + tile_size) on each axis.
    """
    if grid_side < 1:
        raise ConfigError(f"grid side must be positive, got {grid_side}")
    h, w = tile_set.original.shape[:2]
    c = tile_set.tile_size
    cx = (np.arange(grid_side, dtype=np.float64) + 0.5) * w / grid_side
    cy = (np.arange(grid_side, dtype=np.float64) + 0.5) * h / grid_side

    member = np.zeros((tile_set.num_tiles, grid_side, grid_side), dtype=bool)
    for k, (ox, oy) in enumerate(tile_set.offsets):
        in_x = (cx >= ox) & (cx < ox + c)
        in_y = (cy >= oy) & (cy < oy + c)
        member[k] = in_y[:, None] & in_x[None, :]
    return RegionMap(grid_side=grid_side, membership=member)
