"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """Invalid parameters for a generator, model or sweep."""


class TrainingDivergedError(RuntimeError):
    """A non-finite loss showed up during training."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class StoreFormatError(ValueError):
    """An EMB1 file could not be decoded.

    ``field`` names the header field or block that failed and ``offset`` the
    byte offset where decoding stopped.
    """

    def __init__(self, field, offset, detail=""):
        self.field = field
        self.offset = offset
        msg = f"bad {field} at offset {offset}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class EvaluationError(RuntimeError):
    """No query could be scored."""
