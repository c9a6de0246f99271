"""Exception types shared across the package."""


class SaliencyForgeError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(SaliencyForgeError, ValueError):
    """Input violates a documented precondition or invariant."""


class CapacityError(SaliencyForgeError):
    """Exact enumeration requested beyond the supported size guard."""


class TrainingDivergedError(SaliencyForgeError):
    """Non-finite values appeared during RBM training."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class StorageError(SaliencyForgeError, IOError):
    """Array or manifest file could not be read or written."""


class OracleUnavailableError(SaliencyForgeError):
    """Oracle endpoint unreachable after retries."""


class ProtocolError(SaliencyForgeError):
    """Oracle returned a malformed response."""
