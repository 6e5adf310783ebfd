"""Exception types shared across the package."""


class ReluKitError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(ReluKitError):
    """Input or layer dimensions do not line up."""


class CapacityError(ReluKitError):
    """A construction was asked to fit more data than its budget allows.

    The message states the binding inequality.
    """


class GuardError(ReluKitError):
    """A desk-scale guard (dynamic range / runtime) was violated."""


class NetFormatError(ReluKitError):
    """Malformed serialized network stream."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class InvalidConfigError(ReluKitError):
    """Experiment configuration is missing or has invalid keys."""
