"""Exception types raised across the package."""


class UsageError(ValueError):
    """An operation was called with arguments outside its contract."""


class ConfigError(ValueError):
    """A configuration, model file or circuit description is invalid."""


class PBMParseError(ValueError):
    """A portable bitmap could not be parsed.

    The byte offset where parsing stopped is kept on ``offset``.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""
