"""Adapter-specific behaviour beyond the shared conformance corpus."""

import numpy as np
import pytest

from lvlm_adapter.config import AdapterConfig
from lvlm_adapter.model import ModelBridge
from lvlm_adapter.server import Dispatcher
from lvlm_adapter.wire import PROTO_VERSION, WireError


@pytest.fixture(scope="module")
def bridge(tiny_model):
    return ModelBridge(AdapterConfig(model_path=tiny_model).validate())


def fresh_dispatcher(bridge):
    d = Dispatcher(bridge)
    ack = d.handle({"type": "hello", "proto_version": PROTO_VERSION, "options": {}})
    assert ack["type"] == "hello_ack"
    return d


def image(fill=128):
    return np.full((96, 96, 3), fill, np.uint8)


class TestCapabilities:
    def test_geometry_comes_from_the_checkpoint(self, bridge):
        caps = bridge.capabilities()
        assert caps["grid_side"] == 4  # 32-px input, 8-px patches
        assert caps["layer_count"] == 3
        assert caps["head_count"] == 4
        assert caps["vocab_size"] == 65
        assert caps["deterministic"] is True

    def test_version_mismatch_is_rejected(self, bridge):
        d = Dispatcher(bridge)
        out = d.handle({"type": "hello", "proto_version": 2})
        assert out == {
            "type": "error", "code": "protocol",
            "message": out["message"],
        }
        assert "proto_version" in out["message"]


class TestAttentionExtraction:
    def test_rows_cover_exactly_the_image_span(self, bridge):
        bridge.init_stream(101, "original", image(), bridge.tokenize("hello"))
        out = bridge.step(101, None)
        rows = out["attention"]
        assert rows.shape == (3, 4, 16)
        assert (rows >= 0).all()
        # restricted rows cannot exceed the full softmax mass
        assert rows.reshape(12, 16).sum(axis=1).max() <= 1.0 + 1e-5
        bridge.close_stream(101)

    def test_attention_varies_with_image_content(self, bridge):
        rows = {}
        for sid, fill in ((102, 0), (103, 255)):
            img = image(0)
            if fill:
                img[:48, :48] = fill
            bridge.init_stream(sid, "original", img, bridge.tokenize("hi"))
            rows[fill] = bridge.step(sid, None)["attention"]
            bridge.close_stream(sid)
        assert not np.array_equal(rows[0], rows[255])


class TestStreams:
    def test_stream_limit_is_a_config_error(self, tiny_model):
        small = ModelBridge(
            AdapterConfig(model_path=tiny_model, max_streams=5).validate()
        )
        prompt = small.tokenize("hi")
        for sid in range(5):
            small.init_stream(sid, "sub", image(), prompt)
        with pytest.raises(WireError) as exc:
            small.init_stream(99, "original", image(), prompt)
        assert exc.value.code == "config"

    def test_replayed_prefix_matches_stepwise_logits(self, bridge):
        """Feeding tokens one-by-one equals feeding them after a fresh init."""
        prompt = bridge.tokenize("describe the image")
        bridge.init_stream(110, "original", image(200), prompt)
        bridge.step(110, None)
        stepwise = bridge.step(110, 5)
        stepwise = bridge.step(110, 6)

        bridge.init_stream(111, "original", image(200), prompt)
        bridge.step(111, 5)
        replayed = bridge.step(111, 6)
        np.testing.assert_allclose(
            stepwise["logits"], replayed["logits"], atol=1e-5, rtol=0
        )
        bridge.close_stream(110)
        bridge.close_stream(111)

    def test_grayscale_images_are_accepted(self, bridge):
        gray = np.full((64, 64, 1), 90, np.uint8)
        bridge.init_stream(120, "sub", gray, bridge.tokenize("hi"))
        out = bridge.step(120, None)
        assert out["logits"].shape == (65,)
        bridge.close_stream(120)


class TestText:
    def test_prompt_template_is_applied(self, bridge):
        ids = bridge.tokenize("is there a dog?")
        assert bridge.detokenize(ids) == "user : is there a dog ? assistant :"

    def test_custom_template(self, tiny_model):
        custom = ModelBridge(
            AdapterConfig(model_path=tiny_model, prompt_template="{text}").validate()
        )
        assert custom.detokenize(custom.tokenize("yes no")) == "yes no"

    def test_bad_template_rejected(self, tiny_model):
        with pytest.raises(ValueError):
            AdapterConfig(model_path=tiny_model, prompt_template="oops").validate()


class TestDispatcherSurface:
    def test_full_exchange(self, bridge):
        import base64

        d = fresh_dispatcher(bridge)
        prompt = bridge.tokenize("what is this?")
        img = image(40)
        init = d.handle({
            "type": "init_stream", "stream_id": 7, "kind": "original",
            "image": {
                "height": img.shape[0], "width": img.shape[1], "channels": 3,
                "pixels": base64.b64encode(img.tobytes()).decode(),
            },
            "prompt": prompt,
        })
        assert init == {"type": "init_ack", "stream_id": 7, "position": len(prompt)}
        out = d.handle({"type": "step", "stream_id": 7, "token": None})
        assert out["type"] == "step_out"
        assert out["attention"]["grid_side"] == 4
        closed = d.handle({"type": "close_stream", "stream_id": 7})
        assert closed["type"] == "stream_closed"
