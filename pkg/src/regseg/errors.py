"""Exception types shared across the engine.

Each class maps to one CLI exit code (see cli.py) so scripted callers can
tell configuration mistakes from corrupt files or unresolved weights.
"""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(EngineError):
    """Tensor extents or element counts do not match an operation's contract."""


class SpecError(EngineError):
    """A layer/block/schedule specification violates its invariants."""


class BindingError(EngineError):
    """Weight map does not resolve a graph's parameter slots."""


class FormatError(EngineError):
    """A file is not in the expected format (bad magic, header syntax, dtype)."""


class CorruptionError(EngineError):
    """A structurally valid file carries inconsistent or truncated contents."""


class ConfigError(EngineError):
    """Invalid run configuration (CLI flags, preset files)."""
