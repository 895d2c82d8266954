"""Backend abstraction: synthetic in-process model and subprocess protocol client."""

from __future__ import annotations

import shlex

from ..errors import BackendError
from .base import (
    KIND_ORIGINAL,
    KIND_SUB,
    BackendSession,
    SessionInfo,
    StepOutput,
    StreamHandle,
)
from .synthetic import SyntheticSession

__all__ = [
    "BackendSession",
    "SessionInfo",
    "StepOutput",
    "StreamHandle",
    "SyntheticSession",
    "KIND_ORIGINAL",
    "KIND_SUB",
    "open_session",
]


def open_session(descriptor: str, options: dict | None = None) -> BackendSession:
    """Open a backend session from a descriptor string.

    Supported descriptors:
      * "synthetic" — the in-process deterministic backend;
      * "subprocess:<command>" — spawn <command> (shell-style split) and
        speak the wire protocol over its stdio.
    """
    if descriptor == "synthetic":
        return SyntheticSession(options)
    if descriptor.startswith("subprocess:"):
        command = shlex.split(descriptor[len("subprocess:") :])
        if not command:
            raise BackendError(f"malformed backend descriptor {descriptor!r}")
        from .client import SubprocessSession

        return SubprocessSession(command, options)
    raise BackendError(f"malformed backend descriptor {descriptor!r}")
