"""Bridge between the wire protocol and a LLaVA-style Hugging Face model.

Works with patch-wise-projector models (a CLIP-like vision tower whose
patch features become one language token each): the attention rows the
protocol exposes are read directly off the language model's self-
attention at the image-token span, so spatial locality is preserved.
Resampler-style models are out of scope.

Each stream keeps its own KV cache. `init_stream` composes

    [bos] [image placeholder] * num_patches  <prompt ids from the engine>

and defers the prefill forward to the first `step`, so stream creation
itself costs nothing.
"""

from __future__ import annotations

import numpy as np

from .config import AdapterConfig
from .wire import WireError


class _Stream:
    __slots__ = ("kind", "pixel_values", "pending", "cache", "engine_position", "last")

    def __init__(self, kind, pixel_values, input_ids, engine_position):
        self.kind = kind
        self.pixel_values = pixel_values
        self.pending = list(input_ids)  # composed ids not yet forwarded
        self.cache = None
        self.engine_position = engine_position
        self.last = None  # (logits, attention) from the latest forward


class ModelBridge:
    def __init__(self, config: AdapterConfig):
        import torch
        import transformers
        from transformers import AutoImageProcessor, AutoTokenizer, LlavaForConditionalGeneration

        transformers.utils.logging.disable_progress_bar()
        self._torch = torch
        self.config = config
        if config.deterministic:
            torch.manual_seed(config.seed)
            torch.use_deterministic_algorithms(True, warn_only=True)

        dtype = getattr(torch, config.dtype)
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(config.model_path)
            self.image_processor = AutoImageProcessor.from_pretrained(config.model_path)
            self.model = LlavaForConditionalGeneration.from_pretrained(
                config.model_path, dtype=dtype, attn_implementation="eager"
            )
        except Exception as exc:
            raise WireError("protocol", f"cannot load model {config.model_path!r}: {exc}") from None
        self.model.to(config.device)
        self.model.eval()

        mcfg = self.model.config
        vision = mcfg.vision_config
        self.grid_side = vision.image_size // vision.patch_size
        self.num_image_tokens = self.grid_side * self.grid_side
        if getattr(mcfg, "vision_feature_select_strategy", "default") != "default":
            # "full" keeps the CLS feature as an extra token ahead of the grid
            self.num_image_tokens += 1
        self.image_token = mcfg.image_token_index
        self.layer_count = mcfg.text_config.num_hidden_layers
        self.head_count = mcfg.text_config.num_attention_heads
        self.vocab_size = mcfg.text_config.vocab_size
        eos = self.tokenizer.eos_token_id
        self.eos_token = int(eos if eos is not None else mcfg.text_config.eos_token_id)
        bos = self.tokenizer.bos_token_id
        self._bos = int(bos if bos is not None else mcfg.text_config.bos_token_id)
        # image placeholders sit right after bos: keys [1, 1 + num_image_tokens)
        self._image_span = (1, 1 + self.num_image_tokens)

        self._streams: dict[int, _Stream] = {}

    def capabilities(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "grid_side": self.grid_side,
            "layer_count": self.layer_count,
            "head_count": self.head_count,
            "eos_token": self.eos_token,
            "deterministic": bool(
                self.config.deterministic and self.config.device == "cpu"
            ),
        }

    # ------------------------------------------------------------- streams

    def init_stream(self, stream_id: int, kind: str, image: np.ndarray, prompt: list[int]):
        if kind not in ("original", "sub"):
            raise WireError("input", f"unknown stream kind {kind!r}")
        if not prompt:
            raise WireError("input", "prompt must contain at least one token")
        for t in prompt:
            self._check_token(t)
        if stream_id in self._streams:
            raise WireError("protocol", f"stream id {stream_id} already in use")
        if len(self._streams) >= self.config.max_streams:
            raise WireError("config", f"stream limit {self.config.max_streams} reached")

        if image.shape[2] == 1:
            image = np.repeat(image, 3, axis=2)
        pixel_values = self.image_processor(images=image, return_tensors="pt")[
            "pixel_values"
        ].to(self.config.device)

        ids = [self._bos] + [self.image_token] * self.num_image_tokens + [int(t) for t in prompt]
        self._streams[stream_id] = _Stream(kind, pixel_values, ids, len(prompt))
        return {"position": len(prompt)}

    def _check_token(self, token) -> None:
        if not isinstance(token, int) or isinstance(token, bool):
            raise WireError("input", f"token id must be an integer, got {token!r}")
        if not 0 <= token < self.vocab_size:
            raise WireError("input", f"token id {token} outside vocabulary of {self.vocab_size}")
        if token == self.image_token:
            raise WireError("input", f"token id {token} is the internal image placeholder")

    def _get(self, stream_id: int) -> _Stream:
        stream = self._streams.get(stream_id)
        if stream is None:
            raise WireError("protocol", f"stream {stream_id!r} is not live")
        return stream

    def step(self, stream_id: int, token: int | None) -> dict:
        torch = self._torch
        stream = self._get(stream_id)
        if token is not None:
            self._check_token(token)
            stream.pending.append(int(token))
            stream.engine_position += 1
        want_attention = stream.kind == "original"

        if stream.pending:
            inputs = {
                "input_ids": torch.tensor([stream.pending], device=self.config.device),
                "use_cache": True,
                "output_attentions": want_attention,
                "return_dict": True,
            }
            if stream.cache is None:
                inputs["pixel_values"] = stream.pixel_values
            else:
                inputs["past_key_values"] = stream.cache
            try:
                with torch.no_grad():
                    out = self.model(**inputs)
            except torch.cuda.OutOfMemoryError as exc:
                raise WireError("internal", f"out of memory on step: {exc}") from None
            stream.cache = out.past_key_values
            stream.pending = []
            logits = out.logits[0, -1].float().cpu().numpy().astype("<f4")
            if 0 <= self.image_token < logits.size:
                # the placeholder must never be sampled back into a stream
                logits[self.image_token] = -1e30
            attention = self._extract_attention(out.attentions) if want_attention else None
            stream.last = (logits, attention)
        elif stream.last is None:
            raise WireError("internal", "stream has no pending input and no cached output")

        logits, attention = stream.last
        return {
            "position": stream.engine_position,
            "logits": logits,
            "attention": attention,
        }

    def _extract_attention(self, attentions) -> np.ndarray:
        row = self.config.attn_query_row
        lo, hi = self._image_span
        rows = np.empty(
            (self.layer_count, self.head_count, self.num_image_tokens), dtype="<f4"
        )
        for layer, attn in enumerate(attentions):
            # attn: (batch, heads, queries, keys); restrict to image key columns
            picked = attn[0, :, row, lo:hi].float().cpu().numpy()
            rows[layer] = picked.astype("<f4")
        return rows

    def close_stream(self, stream_id: int) -> None:
        self._get(stream_id)
        del self._streams[stream_id]

    # ---------------------------------------------------------------- text

    def tokenize(self, text: str) -> list[int]:
        rendered = self.config.prompt_template.format(text=text)
        return [int(t) for t in self.tokenizer(rendered, add_special_tokens=False)["input_ids"]]

    def detokenize(self, tokens: list[int]) -> str:
        for t in tokens:
            self._check_token(t)
        return self.tokenizer.decode(tokens, skip_special_tokens=True).strip()

    def close(self) -> None:
        self._streams.clear()
