import json
import subprocess
import sys

import pytest

from lvlm_adapter.tiny import build_tiny_checkpoint


@pytest.fixture(scope="session")
def tiny_model(tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "tiny-llava"
    return build_tiny_checkpoint(str(path))


def adapter_command(model_path: str, *extra: str) -> list[str]:
    return [sys.executable, "-m", "lvlm_adapter", "--model", model_path, *extra]


class AdapterProcess:
    """Raw line-level client for driving the adapter over its stdio."""

    def __init__(self, model_path: str, *extra: str):
        self.proc = subprocess.Popen(
            adapter_command(model_path, *extra),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )

    def send(self, message: dict) -> dict:
        self.proc.stdin.write(json.dumps(message) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        assert line, "adapter closed its stdout"
        return json.loads(line)

    def close(self):
        if self.proc.poll() is None:
            try:
                self.send({"type": "close"})
            except Exception:
                pass
            self.proc.stdin.close()
            self.proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
