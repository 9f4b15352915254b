"""Exception types raised across the package."""


class CGVHError(Exception):
    """Base class for all package errors."""


class ZeroField(CGVHError, ValueError):
    pass


class ShapeMismatch(CGVHError, ValueError):
    pass


class InvalidField(CGVHError, ValueError):
    pass


class DimensionCap(CGVHError, ValueError):
    pass


class NumericalFailure(CGVHError, RuntimeError):
    pass


class EmptyDataset(CGVHError, ValueError):
    pass


class LabelOutOfRange(CGVHError, ValueError):
    pass


class EmptyClass(CGVHError, ValueError):
    pass


class FormatError(CGVHError, ValueError):
    """Malformed binary file, config or manifest."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
