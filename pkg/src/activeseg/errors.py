"""Exception types shared across the package."""


class UsageError(RuntimeError):
    """An operation was called with mismatched or stale state."""


class ConfigurationError(ValueError):
    """Shapes, settings or config fields are inconsistent."""


class StreamAbort(RuntimeError):
    """The online loop hit a non-finite loss."""

    def __init__(self, frame_id: int, message: str):
        super().__init__(f"frame {frame_id}: {message}")
        self.frame_id = frame_id


class CheckpointError(ValueError):
    """A checkpoint or dataset file could not be loaded."""


class OracleError(RuntimeError):
    """The oracle failed to answer a label query."""


class OracleTimeout(OracleError):
    """The oracle did not answer within the configured timeout."""
