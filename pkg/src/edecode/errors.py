"""Exception hierarchy shared across the engine.

Each class maps to a CLI exit code and to a wire-protocol error code so
that a subprocess backend can surface failures as the same exception the
in-process path would raise.
"""


class EDecodeError(Exception):
    """Base class for all engine errors."""

    exit_code = 1
    wire_code = "internal"


class ConfigError(EDecodeError):
    """Invalid configuration: bad hyperparameter range, malformed flag, ..."""

    exit_code = 2
    wire_code = "config"


class InputError(EDecodeError):
    """Invalid runtime input: bad image, unknown token id, empty prompt, ..."""

    exit_code = 3
    wire_code = "input"


class BackendError(EDecodeError):
    """Backend unreachable, handshake failure, dead stream, protocol breach."""

    exit_code = 4
    wire_code = "protocol"


class InternalError(EDecodeError):
    """Invariant violation inside the engine itself."""

    exit_code = 5
    wire_code = "internal"


_WIRE_TO_ERROR = {
    "config": ConfigError,
    "input": InputError,
    "protocol": BackendError,
    "internal": InternalError,
}


def error_from_wire(code: str, message: str) -> EDecodeError:
    """Rebuild the matching exception from a wire-protocol error message."""
    cls = _WIRE_TO_ERROR.get(code, BackendError)
    return cls(message)
