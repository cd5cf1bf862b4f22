"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class TapeError(RuntimeError):
    """Backward-pass misuse: non-scalar loss, missing or already-consumed tape."""


class NumericsError(ValueError):
    """Numerically undefined request (zero norm, log of non-positive, NaN grads)."""


class AudioError(ValueError):
    """Malformed or unsupported audio input."""


class ConfigError(ValueError):
    """Invalid configuration value or file."""


class CheckpointError(ValueError):
    """Corrupt or incompatible checkpoint container."""
