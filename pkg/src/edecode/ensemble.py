"""Combine per-image logit vectors into one constrained distribution.

The full variant blends the original image's logits with an attention-
weighted sum over all tile logits, then drops tokens whose summed tile
probability falls below a fraction of the best weighted-sum score. The
fast variant blends the original with the single strongest tile and skips
the constraint.

All arithmetic here is float64 regardless of what the backend sent: the
constraint threshold sits at beta * max and is sensitive to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, InternalError


def softmax(logits: np.ndarray) -> np.ndarray:
    """Standard max-subtracted softmax in float64."""
    x = np.asarray(logits, dtype=np.float64)
    z = np.exp(x - x.max())
    return z / z.sum()


def _as_logits(vec: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"{name} must be a vector, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise InputError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class TokenMask:
    """Set of token ids that survive the plausibility constraint."""

    allowed: np.ndarray  # bool, shape (vocab,)

    @property
    def size(self) -> int:
        return int(self.allowed.sum())

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.allowed)


def ensemble_logits(
    orig: np.ndarray,
    subs: list[np.ndarray],
    weights: np.ndarray,
    alpha: float,
) -> np.ndarray:
    """softmax[(1 - alpha) * orig + alpha * sum_k weights[k] * subs[k]].

    weights is the simplex vector over tiles; alpha balances the global
    view against the weighted tile mixture.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    o = _as_logits(orig, "original logits")
    f = _as_logits(np.asarray(weights), "weights")
    if len(subs) != f.size:
        raise InputError(f"{len(subs)} tile logit vectors but {f.size} weights")
    stacked = np.stack([_as_logits(s, "tile logits") for s in subs])
    if stacked.shape[1] != o.size:
        raise InputError(
            f"vocab mismatch: original {o.size}, tiles {stacked.shape[1]}"
        )
    combined = (1.0 - alpha) * o + alpha * (f @ stacked)
    return softmax(combined)


def ed_plausibility_mask(
    sub_probs: list[np.ndarray],
    weights: np.ndarray,
    beta: float,
    weighted_lhs: bool = False,
) -> TokenMask:
    """Tokens whose tile-probability sum clears beta times the best weighted sum.

    A token y survives when

        sum_k p_k(y)  >=  beta * max_w( sum_k p_k(w) * weights[k] )

    i.e. the candidate side is the plain sum over tiles while the
    reference maximum is weight-adjusted. `weighted_lhs` applies the
    weights to the candidate side too, making both sides symmetric. Under
    either reading the mask is non-empty for beta <= 1.
    """
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must be in [0, 1], got {beta}")
    f = _as_logits(np.asarray(weights), "weights")
    if len(sub_probs) != f.size:
        raise InputError(f"{len(sub_probs)} distributions but {f.size} weights")
    stacked = np.stack([_as_logits(p, "tile probabilities") for p in sub_probs])
    sums = stacked.sum(axis=1)
    if (stacked < 0).any() or not np.allclose(sums, 1.0, atol=1e-6):
        raise InputError("tile probabilities must each be a normalized distribution")

    weighted = f @ stacked
    lhs = weighted if weighted_lhs else stacked.sum(axis=0)
    allowed = lhs >= beta * weighted.max()
    if not allowed.any():
        raise InternalError("plausibility mask is empty")
    return TokenMask(allowed=allowed)


def apply_mask(probs: np.ndarray, mask: TokenMask, renormalize: bool = True) -> np.ndarray:
    """Zero the probability of masked-out tokens, optionally rescaling to sum 1."""
    p = _as_logits(probs, "probabilities")
    if mask.allowed.shape != p.shape:
        raise InputError(
            f"mask length {mask.allowed.shape} does not match vocab {p.shape}"
        )
    if mask.size == 0:
        raise InternalError("cannot apply an empty token mask")
    out = np.where(mask.allowed, p, 0.0)
    if renormalize:
        total = out.sum()
        if total <= 0:
            raise InternalError("masked distribution has no remaining mass")
        out = out / total
    return out


def fast_ed(orig: np.ndarray, best_sub: np.ndarray, alpha: float) -> np.ndarray:
    """softmax[(1 - alpha) * orig + alpha * best_sub]: the two-stream blend."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    o = _as_logits(orig, "original logits")
    b = _as_logits(best_sub, "tile logits")
    if o.shape != b.shape:
        raise InputError(f"vocab mismatch: original {o.size}, tile {b.size}")
    return softmax((1.0 - alpha) * o + alpha * b)
