"""Exception types raised across the package."""


class PartMatchError(Exception):
    """Base class for all package errors."""


class InvalidArgument(PartMatchError, ValueError):
    pass


class ParseError(InvalidArgument):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class EmptySubmapError(InvalidArgument):
    pass


class EmptyPoolError(PartMatchError):
    """No candidate bounding box passed the maximality check."""


class RangeError(PartMatchError, ValueError):
    """A value does not fit in its packed bit field."""


class CorruptRecordError(PartMatchError, ValueError):
    pass


class IncompatibleDescriptorError(PartMatchError):
    """Descriptors were built against different dictionary maps."""


class MissingScoresError(PartMatchError):
    pass


class MissingMapError(PartMatchError, KeyError):
    pass
