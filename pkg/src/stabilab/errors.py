"""Shared exception types, grouped by the exit code they map to at the CLI."""


class StabilabError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(StabilabError):
    """Invalid or unknown configuration key/value. CLI exit code 2."""


class InputError(StabilabError, ValueError):
    """A caller-supplied value violates a documented precondition."""


class DataError(StabilabError):
    """Anything wrong with data files or dataset invariants. CLI exit code 3."""


class BadMagicError(DataError):
    """File does not start with the expected magic bytes."""


class BadVersionError(DataError):
    """File magic is fine but the format version is unsupported."""


class TruncatedFileError(DataError):
    """File ends before the payload promised by its header (or has junk after)."""


class InvariantError(DataError):
    """Parsed content violates a dataset/model invariant (bad label, out-of-range feature)."""


class AlignmentError(DataError):
    """Two datasets that must be example-aligned are not."""


class TrainingDivergedError(StabilabError):
    """Non-finite loss during training. CLI exit code 4."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training loss became non-finite in epoch {epoch}")
