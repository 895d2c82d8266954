"""Protocol server: expose any BackendSession over newline-delimited JSON.

The Dispatcher maps one request dict to one response dict and is reused
both by the stdio server below and by in-process conformance tests, so
the message-level behaviour under test is byte-for-byte the behaviour a
child process exhibits.

Run the synthetic backend as a child process with:

    python -m edecode.backend.server [--seed N]
"""

from __future__ import annotations

import argparse
import sys

from ..attention import AttentionStack
from ..errors import EDecodeError, BackendError
from .base import BackendSession, StreamHandle
from . import wire


class Dispatcher:
    """Stateful request->response mapping for one client connection."""

    def __init__(self, session_factory):
        self._session_factory = session_factory
        self._session: BackendSession | None = None
        self._handles: dict[int, StreamHandle] = {}
        self.closed = False

    def handle(self, message: dict) -> dict:
        try:
            return self._dispatch(message)
        except EDecodeError as exc:
            return {"type": "error", "code": exc.wire_code, "message": str(exc)}
        except Exception as exc:  # defensive: never crash the connection
            return {"type": "error", "code": "internal", "message": f"{type(exc).__name__}: {exc}"}

    def _dispatch(self, message: dict) -> dict:
        mtype = message.get("type")
        if mtype == "hello":
            return self._hello(message)
        if self._session is None:
            raise BackendError("first message must be 'hello'")
        if mtype == "init_stream":
            return self._init_stream(message)
        if mtype == "step":
            return self._step(message)
        if mtype == "close_stream":
            return self._close_stream(message)
        if mtype == "tokenize":
            return {"type": "tokens", "tokens": self._session.tokenize(str(message.get("text", "")))}
        if mtype == "detokenize":
            tokens = [int(t) for t in message.get("tokens", [])]
            return {"type": "text", "text": self._session.detokenize(tokens)}
        if mtype == "close":
            self._session.close()
            self.closed = True
            return {"type": "bye"}
        raise BackendError(f"unknown message type {mtype!r}")

    def _hello(self, message: dict) -> dict:
        version = message.get("proto_version")
        if version != wire.PROTO_VERSION:
            raise BackendError(
                f"unsupported proto_version {version!r}, server speaks {wire.PROTO_VERSION}"
            )
        if self._session is None:
            self._session = self._session_factory(message.get("options") or {})
        info = self._session.info
        return {
            "type": "hello_ack",
            "proto_version": wire.PROTO_VERSION,
            "vocab_size": info.vocab_size,
            "grid_side": info.grid_side,
            "layer_count": info.layer_count,
            "head_count": info.head_count,
            "eos_token": info.eos_token,
            "deterministic": info.deterministic,
        }

    def _init_stream(self, message: dict) -> dict:
        image = wire.decode_image(message.get("image") or {})
        prompt = [int(t) for t in message.get("prompt", [])]
        kind = message.get("kind")
        tile_index = message.get("tile_index")
        handle = self._session.init_stream(
            image, prompt, kind, None if tile_index is None else int(tile_index)
        )
        client_id = message.get("stream_id")
        if client_id is None:
            client_id = handle.stream_id
        client_id = int(client_id)
        if client_id in self._handles:
            raise BackendError(f"stream id {client_id} already in use")
        self._handles[client_id] = handle
        return {"type": "init_ack", "stream_id": client_id, "position": handle.position}

    def _get_handle(self, message: dict) -> tuple[int, StreamHandle]:
        client_id = message.get("stream_id")
        handle = self._handles.get(client_id)
        if handle is None:
            raise BackendError(f"stream {client_id!r} is not live")
        return client_id, handle

    def _step(self, message: dict) -> dict:
        client_id, handle = self._get_handle(message)
        token = message.get("token")
        out = self._session.step(handle, None if token is None else int(token))
        response = {
            "type": "step_out",
            "stream_id": client_id,
            "position": handle.position,
            "logits": wire.encode_f32(out.logits),
            "attention": None,
        }
        if out.attention is not None:
            response["attention"] = {
                "layer_count": out.attention.layer_count,
                "head_count": out.attention.head_count,
                "grid_side": out.attention.grid_side,
                "rows": wire.encode_f32(out.attention.rows),
            }
        return response

    def _close_stream(self, message: dict) -> dict:
        client_id, handle = self._get_handle(message)
        self._session.close_stream(handle)
        del self._handles[client_id]
        return {"type": "stream_closed", "stream_id": client_id}


def attention_from_payload(payload: dict) -> AttentionStack:
    """Rebuild an AttentionStack from a step_out attention object."""
    rows = wire.decode_f32(payload["rows"])
    layers, heads, side = (
        int(payload["layer_count"]),
        int(payload["head_count"]),
        int(payload["grid_side"]),
    )
    if rows.size != layers * heads * side * side:
        raise BackendError(
            f"attention payload has {rows.size} values, expected {layers}x{heads}x{side * side}"
        )
    return AttentionStack(rows=rows.reshape(layers, heads, side * side), grid_side=side)


def serve(session_factory, stdin=None, stdout=None) -> None:
    """Blocking read-dispatch-write loop over text streams."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    dispatcher = Dispatcher(session_factory)
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            message = wire.parse_line(line)
        except BackendError as exc:
            response = {"type": "error", "code": "protocol", "message": str(exc)}
        else:
            response = dispatcher.handle(message)
        stdout.write(wire.dump_line(response) + "\n")
        stdout.flush()
        if dispatcher.closed:
            break


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Serve the synthetic backend over stdio")
    parser.add_argument("--seed", type=int, default=0, help="synthetic backend seed")
    args = parser.parse_args(argv)

    from .synthetic import SyntheticSession

    def factory(options: dict):
        merged = {"seed": args.seed}
        merged.update(options)
        return SyntheticSession(merged)

    serve(factory)
    return 0


if __name__ == "__main__":
    sys.exit(main())
