"""Backend contract: synthetic rules, wire transport, conformance corpus."""

import json
import subprocess
import sys

import numpy as np
import pytest

from edecode.backend import KIND_ORIGINAL, KIND_SUB, SyntheticSession, open_session, wire
from edecode.backend.conformance import check_determinism, run_conformance
from edecode.backend.server import Dispatcher
from edecode.errors import BackendError, InputError

from conftest import make_image, quadrant_image

SERVER_CMD = f"{sys.executable} -m edecode.backend.server"


def synthetic_dispatcher():
    return Dispatcher(lambda options: SyntheticSession(options))


class TestSyntheticCapabilities:
    def test_default_capabilities(self):
        info = SyntheticSession().info
        assert (info.vocab_size, info.grid_side) == (64, 24)
        assert (info.layer_count, info.head_count) == (4, 4)
        assert info.deterministic

    def test_malformed_descriptor_is_connection_error(self):
        with pytest.raises(BackendError):
            open_session("wat")
        with pytest.raises(BackendError):
            open_session("subprocess:")


class TestSyntheticStreams:
    def test_step_is_deterministic_across_sessions(self):
        img = quadrant_image()
        outs = []
        for _ in range(100):
            session = SyntheticSession({"seed": 11})
            h = session.init_stream(img, [1, 2, 3], KIND_ORIGINAL)
            out = session.step(h, 5)
            outs.append((out.logits.tobytes(), out.attention.rows.tobytes()))
        assert len(set(outs)) == 1

    def test_same_token_twice_changes_position_and_logits(self):
        session = SyntheticSession()
        h = session.init_stream(quadrant_image(), [1, 2, 3], KIND_ORIGINAL)
        first = session.step(h, 5)
        assert h.position == 4
        second = session.step(h, 5)
        assert h.position == 5
        assert not np.array_equal(first.logits, second.logits)

    def test_token_out_of_vocabulary_rejected(self):
        session = SyntheticSession()
        h = session.init_stream(quadrant_image(), [1], KIND_ORIGINAL)
        with pytest.raises(InputError):
            session.step(h, 64)

    def test_empty_prompt_rejected(self):
        with pytest.raises(InputError):
            SyntheticSession().init_stream(quadrant_image(), [], KIND_ORIGINAL)

    def test_sub_stream_returns_no_attention(self):
        session = SyntheticSession()
        h = session.init_stream(quadrant_image(), [1], KIND_SUB, tile_index=2)
        assert session.step(h, None).attention is None

    def test_closed_stream_is_dead(self):
        session = SyntheticSession()
        h = session.init_stream(quadrant_image(), [1], KIND_ORIGINAL)
        session.close_stream(h)
        with pytest.raises(BackendError):
            session.step(h, 1)


class TestSyntheticRules:
    def test_all_black_image_gives_uniform_attention(self):
        session = SyntheticSession()
        h = session.init_stream(make_image(448, 448, fill=0), [1, 2], KIND_ORIGINAL)
        rows = session.step(h, None).attention.rows
        np.testing.assert_allclose(rows, 1.0 / 576, atol=1e-7)

    def test_bright_quadrant_dominates_attention(self):
        session = SyntheticSession()
        h = session.init_stream(quadrant_image(448), [1, 2], KIND_ORIGINAL)
        rows = session.step(h, None).attention.rows
        grid = rows.reshape(4, 4, 24, 24)
        quadrant_mass = grid[:, :, :12, :12].sum(axis=(2, 3))
        assert (quadrant_mass > 0.5).all()

    def test_first_token_answer_tracks_brightness(self):
        session = SyntheticSession()
        prompt = session.tokenize("is there a dog")
        bright = session.init_stream(make_image(64, 64, fill=220), prompt, KIND_ORIGINAL)
        dark = session.init_stream(make_image(64, 64, fill=30), prompt, KIND_ORIGINAL)
        assert int(np.argmax(session.step(bright, None).logits)) == 1  # "yes"
        assert int(np.argmax(session.step(dark, None).logits)) == 2  # "no"

    def test_tokenize_detokenize_roundtrip_known_words(self):
        session = SyntheticSession()
        tokens = session.tokenize("Yes, there is a dog.")
        assert session.detokenize(tokens) == "yes there is a dog"

    def test_unknown_words_hash_deterministically(self):
        session = SyntheticSession()
        assert session.tokenize("zebra") == session.tokenize("zebra")
        assert 3 <= session.tokenize("zebra")[0] < 64


class TestWireEncoding:
    def test_f32_roundtrip_is_bit_exact(self, rng):
        arr = rng.normal(size=257).astype(np.float32)
        back = wire.decode_f32(wire.encode_f32(arr))
        assert arr.tobytes() == back.tobytes()

    def test_image_roundtrip(self, rng):
        img = rng.integers(0, 256, size=(7, 9, 3), dtype=np.uint8)
        back = wire.decode_image(wire.encode_image(img))
        np.testing.assert_array_equal(img, back)

    def test_truncated_image_payload_rejected(self):
        payload = wire.encode_image(make_image(4, 4))
        payload["height"] = 5
        with pytest.raises(BackendError):
            wire.decode_image(payload)

    def test_parse_line_rejects_garbage(self):
        with pytest.raises(BackendError):
            wire.parse_line("not json")
        with pytest.raises(BackendError):
            wire.parse_line('["no", "type"]')


class TestConformance:
    def test_in_process_dispatcher_passes(self):
        assert run_conformance(synthetic_dispatcher().handle) == []

    def test_in_process_determinism(self):
        assert check_determinism(lambda: synthetic_dispatcher().handle) == []

    def test_subprocess_server_passes(self):
        proc = subprocess.Popen(
            SERVER_CMD.split(),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

        def send(message):
            proc.stdin.write(wire.dump_line(message) + "\n")
            proc.stdin.flush()
            return json.loads(proc.stdout.readline())

        try:
            assert run_conformance(send) == []
        finally:
            proc.stdin.close()
            assert proc.wait(timeout=10) == 0


class TestSubprocessSession:
    def test_wire_path_matches_in_process_bytes(self):
        img = quadrant_image()
        with open_session(f"subprocess:{SERVER_CMD}", {"seed": 9}) as remote:
            local = SyntheticSession({"seed": 9})
            rh = remote.init_stream(img, [1, 2, 3], KIND_ORIGINAL)
            lh = local.init_stream(img, [1, 2, 3], KIND_ORIGINAL)
            for token in (None, 5, 9):
                r = remote.step(rh, token)
                l = local.step(lh, token)
                assert r.logits.tobytes() == l.logits.tobytes()
                assert r.attention.rows.tobytes() == l.attention.rows.tobytes()
            assert remote.tokenize("a dog") == local.tokenize("a dog")
            assert remote.detokenize([1, 9]) == local.detokenize([1, 9])

    def test_error_codes_cross_the_wire_as_exceptions(self):
        with open_session(f"subprocess:{SERVER_CMD}") as session:
            with pytest.raises(InputError):
                session.init_stream(quadrant_image(), [], KIND_ORIGINAL)
            h = session.init_stream(quadrant_image(), [1], KIND_ORIGINAL)
            with pytest.raises(InputError):
                session.step(h, 10**9)
            session.close_stream(h)
            with pytest.raises(BackendError):
                session.step(h, 1)

    def test_dead_process_surfaces_as_backend_error(self):
        with pytest.raises(BackendError):
            open_session(f"subprocess:{sys.executable} -c pass")
