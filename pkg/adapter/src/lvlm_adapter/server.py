"""Stdio protocol server around a ModelBridge.

Launch as a child process of the decoding engine:

    edecode decode --backend "subprocess:lvlm-adapter --model /path/to/model" ...

One JSON message per line in, one out; model load happens at startup so
the first hello answers promptly. All diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import sys

from .config import AdapterConfig
from .model import ModelBridge
from .wire import PROTO_VERSION, WireError, dump_line, encode_f32, decode_image, parse_line


class Dispatcher:
    def __init__(self, bridge: ModelBridge):
        self._bridge = bridge
        self._greeted = False
        self.closed = False

    def handle(self, message: dict) -> dict:
        try:
            return self._dispatch(message)
        except WireError as exc:
            return {"type": "error", "code": exc.code, "message": str(exc)}
        except Exception as exc:  # keep the connection alive on surprises
            return {"type": "error", "code": "internal", "message": f"{type(exc).__name__}: {exc}"}

    def _dispatch(self, message: dict) -> dict:
        mtype = message.get("type")
        if mtype == "hello":
            if message.get("proto_version") != PROTO_VERSION:
                raise WireError(
                    "protocol",
                    f"unsupported proto_version {message.get('proto_version')!r}, "
                    f"server speaks {PROTO_VERSION}",
                )
            self._greeted = True
            return {"type": "hello_ack", "proto_version": PROTO_VERSION,
                    **self._bridge.capabilities()}
        if not self._greeted:
            raise WireError("protocol", "first message must be 'hello'")
        if mtype == "init_stream":
            ack = self._bridge.init_stream(
                int(message.get("stream_id", -1)),
                message.get("kind"),
                decode_image(message.get("image") or {}),
                [self._int_token(t) for t in message.get("prompt", [])],
            )
            return {"type": "init_ack", "stream_id": message.get("stream_id"),
                    "position": ack["position"]}
        if mtype == "step":
            token = message.get("token")
            out = self._bridge.step(
                message.get("stream_id"), None if token is None else self._int_token(token)
            )
            attention = None
            if out["attention"] is not None:
                attention = {
                    "layer_count": int(out["attention"].shape[0]),
                    "head_count": int(out["attention"].shape[1]),
                    "grid_side": self._bridge.grid_side,
                    "rows": encode_f32(out["attention"]),
                }
            return {
                "type": "step_out",
                "stream_id": message.get("stream_id"),
                "position": out["position"],
                "logits": encode_f32(out["logits"]),
                "attention": attention,
            }
        if mtype == "close_stream":
            self._bridge.close_stream(message.get("stream_id"))
            return {"type": "stream_closed", "stream_id": message.get("stream_id")}
        if mtype == "tokenize":
            return {"type": "tokens", "tokens": self._bridge.tokenize(str(message.get("text", "")))}
        if mtype == "detokenize":
            tokens = [self._int_token(t) for t in message.get("tokens", [])]
            return {"type": "text", "text": self._bridge.detokenize(tokens)}
        if mtype == "close":
            self._bridge.close()
            self.closed = True
            return {"type": "bye"}
        raise WireError("protocol", f"unknown message type {mtype!r}")

    @staticmethod
    def _int_token(value) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise WireError("input", f"token id must be an integer, got {value!r}")
        return value


def serve(bridge: ModelBridge, stdin=None, stdout=None) -> None:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    dispatcher = Dispatcher(bridge)
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            message = parse_line(line)
        except WireError as exc:
            response = {"type": "error", "code": exc.code, "message": str(exc)}
        else:
            response = dispatcher.handle(message)
        stdout.write(dump_line(response) + "\n")
        stdout.flush()
        if dispatcher.closed:
            break


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lvlm-adapter",
        description="Serve a LLaVA-style Hugging Face model over the backend wire protocol",
    )
    parser.add_argument("--model", required=True, help="model id or local path")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--dtype", default="float32",
                        choices=("float32", "float16", "bfloat16"))
    parser.add_argument("--max-streams", type=int, default=16)
    parser.add_argument("--attn-query-row", type=int, default=-1,
                        help="query position whose attention row is reported")
    parser.add_argument("--prompt-template", default="USER: {text} ASSISTANT:")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--no-deterministic", action="store_true")
    args = parser.parse_args(argv)

    config = AdapterConfig(
        model_path=args.model,
        device=args.device,
        dtype=args.dtype,
        max_streams=args.max_streams,
        attn_query_row=args.attn_query_row,
        prompt_template=args.prompt_template,
        seed=args.seed,
        deterministic=not args.no_deterministic,
    )
    try:
        config.validate()
        bridge = ModelBridge(config)
    except (ValueError, WireError) as exc:
        print(f"lvlm-adapter: {exc}", file=sys.stderr)
        return 2
    print(f"lvlm-adapter: serving {args.model} on {args.device}", file=sys.stderr)
    serve(bridge)
    return 0


if __name__ == "__main__":
    sys.exit(main())
