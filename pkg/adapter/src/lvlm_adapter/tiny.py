"""Build a miniature LLaVA-style checkpoint for offline testing.

The checkpoint is a real LlavaForConditionalGeneration (CLIP-like vision
tower, tiny Llama text model, patch-wise projector) with seeded random
weights and a word-level tokenizer, so the full serving path can run in
seconds without downloading anything.

One deliberate nudge: the lm-head rows for "yes" and "no" are rescaled
to dominate every other row, so greedy or near-greedy decoding always
emits parseable yes/no leading tokens. Everything else about the model
(vision features, attention, caching) behaves like any other checkpoint.

    python -m lvlm_adapter.tiny /tmp/tiny-llava
"""

from __future__ import annotations

import sys

# the image placeholder sits at the end so ordinary low ids never collide
WORDS = [
    "<pad>", "<s>", "</s>", "<unk>",
    "yes", "no", "user", "assistant", ":", ".", ",", "?", "!",
    "is", "there", "a", "an", "the", "in", "on", "and", "of", "this",
    "image", "picture", "photo", "please", "describe", "detail", "what",
    "dog", "cat", "car", "chair", "person", "bird", "horse", "boat",
    "bottle", "cup", "bowl", "banana", "apple", "pizza", "couch", "bed",
    "tv", "laptop", "book", "clock", "vase", "bench", "truck", "frisbee",
    "white", "black", "red", "blue", "green", "small", "large", "two",
    "three", "many", "<image>",
]


def build_tiny_checkpoint(path: str, seed: int = 0) -> str:
    import torch
    from tokenizers import Tokenizer, models, normalizers, pre_tokenizers
    from transformers import (
        CLIPImageProcessor,
        CLIPVisionConfig,
        LlamaConfig,
        LlavaConfig,
        LlavaForConditionalGeneration,
        PreTrainedTokenizerFast,
    )

    vocab = {w: i for i, w in enumerate(WORDS)}
    tok = Tokenizer(models.WordLevel(vocab=vocab, unk_token="<unk>"))
    tok.normalizer = normalizers.Lowercase()
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    tokenizer = PreTrainedTokenizerFast(
        tokenizer_object=tok,
        pad_token="<pad>", bos_token="<s>", eos_token="</s>", unk_token="<unk>",
        additional_special_tokens=["<image>"],
    )

    vision = CLIPVisionConfig(
        hidden_size=32, intermediate_size=64, num_hidden_layers=2,
        num_attention_heads=2, image_size=32, patch_size=8, projection_dim=32,
    )
    # 3+ text layers and heads so the engine's default top-3 selection fits
    text = LlamaConfig(
        hidden_size=64, intermediate_size=128, num_hidden_layers=3,
        num_attention_heads=4, num_key_value_heads=4, vocab_size=len(WORDS),
        max_position_embeddings=512,
        bos_token_id=vocab["<s>"], eos_token_id=vocab["</s>"],
        pad_token_id=vocab["<pad>"],
    )
    config = LlavaConfig(
        vision_config=vision, text_config=text,
        image_token_index=vocab["<image>"],
        vision_feature_select_strategy="default", vision_feature_layer=-1,
        image_seq_length=(32 // 8) ** 2,
    )

    torch.manual_seed(seed)
    model = LlavaForConditionalGeneration(config)
    with torch.no_grad():
        head = model.get_output_embeddings().weight
        head.mul_(0.02)
        generator = torch.Generator().manual_seed(seed + 1)
        for word in ("yes", "no"):
            head[vocab[word]] = torch.randn(head.shape[1], generator=generator)

    model.save_pretrained(path)
    tokenizer.save_pretrained(path)
    CLIPImageProcessor(
        do_resize=True, size={"shortest_edge": 32},
        do_center_crop=True, crop_size={"height": 32, "width": 32},
    ).save_pretrained(path)
    return path


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "tiny-llava"
    print(build_tiny_checkpoint(target))
