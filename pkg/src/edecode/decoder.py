"""Per-token generation loop over a backend session.

Three modes share one loop:

* regular — one stream on the raw image; plain softmax of its logits.
* ed — one stream on the (possibly resized) original plus one per tile.
  Each step refines the original stream's attention into per-tile
  weights, blends all logit vectors, applies the plausibility constraint,
  and samples. Costs N+1 forwards per token.
* fasted — the original stream plus, lazily, the stream of whichever
  tile currently carries the most attention. Two forwards per token;
  when the leading tile changes, the newly chosen stream replays the
  tokens it missed so its context still matches the sampled prefix, and
  those replays are counted separately in the trace.

Every stream is fed the same sampled token, so all conditioning contexts
stay identical to the emitted prefix.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .attention import aggregate_regions, attention_weights, refine_attention
from .backend.base import KIND_ORIGINAL, KIND_SUB, BackendSession, StreamHandle
from .config import DecodeConfig
from .ensemble import apply_mask, ed_plausibility_mask, ensemble_logits, fast_ed, softmax
from .errors import BackendError, ConfigError, InputError, InternalError
from .tiling import build_region_map, split_image


@dataclass
class StepTrace:
    """Everything observable about one decode step."""

    step: int
    token: int
    forwards: int  # budgeted forwards: 1 regular, 2 fasted, N+1 ed
    replays: int = 0
    scores: list[float] | None = None
    weights: list[float] | None = None
    k_star: int | None = None
    mask_size: int | None = None
    refined_min: float | None = None
    refined_max: float | None = None
    refined_mean: float | None = None

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "token": self.token,
            "forwards": self.forwards,
            "replays": self.replays,
            "scores": self.scores,
            "weights": self.weights,
            "k_star": self.k_star,
            "mask_size": self.mask_size,
            "refined_min": self.refined_min,
            "refined_max": self.refined_max,
            "refined_mean": self.refined_mean,
        }


@dataclass
class GenerationResult:
    tokens: list[int] = field(default_factory=list)
    text: str = ""
    traces: list[StepTrace] = field(default_factory=list)
    step_seconds: list[float] = field(default_factory=list)
    status: str = "ok"
    error: str | None = None

    @property
    def total_forwards(self) -> int:
        return sum(t.forwards for t in self.traces)

    @property
    def total_replays(self) -> int:
        return sum(t.replays for t in self.traces)

    def to_dict(self) -> dict:
        return {
            "tokens": self.tokens,
            "text": self.text,
            "status": self.status,
            "error": self.error,
            "total_forwards": self.total_forwards,
            "total_replays": self.total_replays,
        }


def sample(probs: np.ndarray, sampling: str, rng: np.random.Generator) -> int:
    """Draw one token id from a normalized distribution.

    greedy takes the lowest-index argmax; multinomial inverts the CDF with
    a single uniform draw from the caller's generator (PCG64 in this
    engine), so a seed pins the whole trajectory.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
        raise InternalError("sample() requires a normalized probability vector")
    if sampling == "greedy":
        return int(np.argmax(p))
    if sampling == "multinomial":
        u = rng.random()
        idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
        if idx >= p.size:
            # u landed beyond the rounded-down total: take the last live token
            idx = int(np.flatnonzero(p > 0)[-1])
        return idx
    raise ConfigError(f"unknown sampling mode {sampling!r}")


class _FastStreams:
    """Lazy tile streams for fasted mode, with replay bookkeeping."""

    def __init__(self, session, tiles, prompt):
        self._session = session
        self._tiles = tiles
        self._prompt = prompt
        self._state: dict[int, tuple[StreamHandle, int]] = {}  # k -> (handle, consumed)

    def handles(self):
        return [h for h, _ in self._state.values()]

    def step(self, k_star: int, generated: list[int]):
        """Advance tile k_star's stream to the full generated prefix.

        Returns (output, forwards, replays): the final forward is the
        budgeted one, anything before it replays missed tokens.
        """
        entry = self._state.get(k_star)
        if entry is None:
            handle = self._session.init_stream(
                self._tiles[k_star], self._prompt, KIND_SUB, tile_index=k_star
            )
            consumed = 0
        else:
            handle, consumed = entry
        missing = generated[consumed:]
        if not missing:
            out = self._session.step(handle, None)
            forwards = 1
        else:
            for tok in missing:
                out = self._session.step(handle, tok)
            forwards = len(missing)
        self._state[k_star] = (handle, len(generated))
        return out, forwards, forwards - 1


def generate(
    session: BackendSession,
    image: np.ndarray,
    prompt: list[int],
    config: DecodeConfig,
) -> GenerationResult:
    """Run one generation; stops at the backend's eos token or max_tokens.

    A backend failure mid-generation returns the tokens produced so far
    with status "backend_error" instead of raising.
    """
    config.validate()
    if not prompt:
        raise InputError("prompt must contain at least one token")
    result = GenerationResult()
    if config.max_tokens == 0:
        return result

    info = session.info
    rng = np.random.Generator(np.random.PCG64(config.seed))
    opened: list[StreamHandle] = []
    fast: _FastStreams | None = None
    try:
        if config.mode == "regular":
            orig = session.init_stream(image, prompt, KIND_ORIGINAL)
            opened.append(orig)
            regions = None
            sub_handles: list[StreamHandle] = []
        else:
            tile_set = split_image(image, config.num_tiles, config.tile_size)
            regions = build_region_map(tile_set, info.grid_side)
            orig = session.init_stream(tile_set.original, prompt, KIND_ORIGINAL)
            opened.append(orig)
            sub_handles = []
            if config.mode == "ed":
                for k, tile in enumerate(tile_set.tiles):
                    h = session.init_stream(tile, prompt, KIND_SUB, tile_index=k)
                    sub_handles.append(h)
                    opened.append(h)
            else:
                fast = _FastStreams(session, tile_set.tiles, prompt)

        pending: int | None = None
        for t in range(config.max_tokens):
            started = time.perf_counter()
            try:
                orig_out = session.step(orig, pending)
                trace = StepTrace(step=t, token=-1, forwards=1)

                if config.mode == "regular":
                    probs = softmax(orig_out.logits)
                else:
                    if orig_out.attention is None:
                        raise BackendError("backend sent no attention for the original stream")
                    refined = refine_attention(
                        orig_out.attention, config.top_layers, config.top_heads
                    )
                    scores = aggregate_regions(refined, regions)
                    trace.scores = [float(v) for v in scores]
                    trace.refined_min = float(refined.min())
                    trace.refined_max = float(refined.max())
                    trace.refined_mean = float(refined.mean())

                    if config.mode == "ed":
                        weights = attention_weights(scores, config.tau)
                        trace.weights = [float(v) for v in weights]
                        trace.k_star = int(np.argmax(scores))
                        sub_outs = [session.step(h, pending) for h in sub_handles]
                        trace.forwards += len(sub_handles)
                        probs = ensemble_logits(
                            orig_out.logits,
                            [o.logits for o in sub_outs],
                            weights,
                            config.alpha,
                        )
                        mask = ed_plausibility_mask(
                            [softmax(o.logits) for o in sub_outs],
                            weights,
                            config.beta,
                            config.weighted_lhs,
                        )
                        trace.mask_size = mask.size
                        probs = apply_mask(probs, mask, config.renormalize)
                    else:  # fasted: no temperature, no constraint
                        k_star = int(np.argmax(scores))
                        trace.k_star = k_star
                        sub_out, forwards, replays = fast.step(k_star, result.tokens)
                        trace.forwards += forwards - replays
                        trace.replays = replays
                        probs = fast_ed(orig_out.logits, sub_out.logits, config.alpha)
            except BackendError as exc:
                result.status = "backend_error"
                result.error = str(exc)
                break

            token = sample(probs, config.sampling, rng)
            trace.token = token
            result.tokens.append(token)
            result.traces.append(trace)
            result.step_seconds.append(time.perf_counter() - started)
            pending = token
            if token == info.eos_token:
                break

        if result.status == "ok":
            try:
                result.text = session.detokenize(result.tokens)
            except BackendError as exc:
                result.status = "backend_error"
                result.error = str(exc)
    finally:
        if fast is not None:
            opened.extend(fast.handles())
        for handle in opened:
            try:
                session.close_stream(handle)
            except BackendError:
                pass
    return result
