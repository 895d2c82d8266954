"""Client side of the wire protocol: a BackendSession backed by a child process."""

from __future__ import annotations

import subprocess

import numpy as np

from ..errors import BackendError, error_from_wire
from .base import BackendSession, SessionInfo, StepOutput, StreamHandle
from .server import attention_from_payload
from . import wire


class SubprocessSession(BackendSession):
    """Spawn a protocol server as a child process and drive it over stdio."""

    def __init__(self, command: list[str], options: dict | None = None):
        if not command:
            raise BackendError("empty backend command")
        try:
            self._proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=None,  # inherit: backend diagnostics go to our stderr
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BackendError(f"cannot launch backend {command!r}: {exc}") from None
        self._next_id = 1
        self._closed = False
        ack = self._request(
            {"type": "hello", "proto_version": wire.PROTO_VERSION, "options": options or {}}
        )
        if ack.get("type") != "hello_ack" or ack.get("proto_version") != wire.PROTO_VERSION:
            self._shutdown()
            raise BackendError(f"handshake failed: {ack!r}")
        self._info = SessionInfo(
            vocab_size=int(ack["vocab_size"]),
            grid_side=int(ack["grid_side"]),
            layer_count=int(ack["layer_count"]),
            head_count=int(ack["head_count"]),
            eos_token=int(ack["eos_token"]),
            deterministic=bool(ack.get("deterministic", False)),
        )

    @property
    def info(self) -> SessionInfo:
        return self._info

    def _request(self, message: dict) -> dict:
        if self._closed or self._proc.poll() is not None:
            raise BackendError("backend process is not running")
        try:
            self._proc.stdin.write(wire.dump_line(message) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BackendError(f"backend pipe closed: {exc}") from None
        line = self._proc.stdout.readline()
        if not line:
            code = self._proc.poll()
            raise BackendError(f"backend closed its stdout (exit code {code})")
        response = wire.parse_line(line)
        if response.get("type") == "error":
            raise error_from_wire(response.get("code", "protocol"), response.get("message", ""))
        return response

    def init_stream(self, image, prompt, kind, tile_index=None) -> StreamHandle:
        sid = self._next_id
        self._next_id += 1
        message = {
            "type": "init_stream",
            "stream_id": sid,
            "kind": kind,
            "image": wire.encode_image(np.ascontiguousarray(image)),
            "prompt": [int(t) for t in prompt],
        }
        if tile_index is not None:
            message["tile_index"] = int(tile_index)
        ack = self._request(message)
        if ack.get("type") != "init_ack":
            raise BackendError(f"unexpected response to init_stream: {ack!r}")
        return StreamHandle(
            stream_id=sid, kind=kind, tile_index=tile_index, position=int(ack["position"])
        )

    def step(self, handle: StreamHandle, token: int | None) -> StepOutput:
        out = self._request(
            {
                "type": "step",
                "stream_id": handle.stream_id,
                "token": None if token is None else int(token),
            }
        )
        if out.get("type") != "step_out":
            raise BackendError(f"unexpected response to step: {out!r}")
        handle.position = int(out["position"])
        logits = wire.decode_f32(out["logits"])
        if logits.size != self._info.vocab_size:
            raise BackendError(
                f"backend sent {logits.size} logits, expected {self._info.vocab_size}"
            )
        attention = None
        if out.get("attention") is not None:
            attention = attention_from_payload(out["attention"])
        return StepOutput(logits=logits, attention=attention)

    def close_stream(self, handle: StreamHandle) -> None:
        ack = self._request({"type": "close_stream", "stream_id": handle.stream_id})
        if ack.get("type") != "stream_closed":
            raise BackendError(f"unexpected response to close_stream: {ack!r}")

    def tokenize(self, text: str) -> list[int]:
        out = self._request({"type": "tokenize", "text": text})
        if out.get("type") != "tokens":
            raise BackendError(f"unexpected response to tokenize: {out!r}")
        return [int(t) for t in out["tokens"]]

    def detokenize(self, tokens: list[int]) -> str:
        out = self._request({"type": "detokenize", "tokens": [int(t) for t in tokens]})
        if out.get("type") != "text":
            raise BackendError(f"unexpected response to detokenize: {out!r}")
        return str(out["text"])

    def _shutdown(self):
        self._closed = True
        try:
            self._proc.stdin.close()
        except Exception:
            pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()

    def close(self) -> None:
        if self._closed:
            return
        try:
            self._request({"type": "close"})
        except BackendError:
            pass
        self._shutdown()
