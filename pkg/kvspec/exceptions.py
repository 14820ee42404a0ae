from typing import Optional, Sequence


class KVSpecError(Exception):
    """Base class for the errors raised on purpose by this package."""


class ConfigError(KVSpecError):
    """Raised when a configuration document cannot be parsed."""


class ConfigValidationError(KVSpecError):
    """Raised when a parsed configuration violates a domain invariant."""


class AcceptanceLookupError(KVSpecError):
    "Raised when an acceptance model has no entry for the requested compression ratio."


class ContractError(KVSpecError):
    """Raised when an operation is called outside of its contract."""


class EnumerationGuardError(KVSpecError):
    """Raised when an exhaustive enumeration would exceed the configured limit."""


class InfiniteKLError(KVSpecError):
    """The lossy distribution assigns zero mass where the full one does not."""

    def __init__(self, prefix: Optional[Sequence[int]] = None):
        self.prefix = tuple(prefix) if prefix is not None else None
        super().__init__(f"KL divergence is infinite at prefix {self.prefix}")


class InfeasibleError(KVSpecError):
    """Raised when knobs or a search space admit no feasible operating point."""

    def __init__(self, message: str, constraint: Optional[str] = None):
        self.constraint = constraint
        super().__init__(message)


class UnboundedLPError(KVSpecError):
    "Raised when the throughput program is unbounded along some serving path."

    def __init__(self, path: str):
        self.path = path
        super().__init__(f"Throughput is unbounded: path {path} consumes no resource")


class UnsupportedOperationError(KVSpecError):
    "Raised when a compressor is asked for an operation its mode does not support."


class CompressionError(KVSpecError):
    "Raised when compression metadata or a compression request is inconsistent."
