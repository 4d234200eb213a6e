"""Exception hierarchy shared by the loaders, renderer and CLI."""


class DrActionError(Exception):
    """Base class for all library errors."""


class SkeletonFormatError(DrActionError, ValueError):
    """A file could not be parsed. ``offset`` is the byte offset of the failure."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}: "
        if offset is not None:
            where += f"byte {offset}: "
        super().__init__(where + message)


class SchemaError(DrActionError, ValueError):
    """Parsed data does not match the declared topology or container schema."""


class DataError(DrActionError, ValueError):
    """Numerically invalid input data (NaN/Inf coordinates, bad quaternions)."""


class NumericalError(DrActionError, ArithmeticError):
    """A numerical failure during rendering or optimization."""


class TrainingDivergedError(NumericalError):
    def __init__(self, message, epoch=None, step=None):
        self.epoch = epoch
        self.step = step
        super().__init__(message)
