"""Exception types shared across the engine."""


class MatliftError(Exception):
    """Base class for all engine errors."""


class MeshLoadError(MatliftError):
    """Asset parsing failed; carries the offending 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(MatliftError):
    """Bad argument or precondition violation."""


class UnselectableMaterialError(MatliftError):
    """Material too small or eroded away; no click can be sampled."""


class OracleError(MatliftError):
    """Similarity oracle could not serve a request."""
