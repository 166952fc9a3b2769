"""Exception hierarchy.

``DataError`` subclasses describe bad inputs (the CLI maps them to exit code 2);
anything else escaping a command is treated as an internal failure.
"""


class DataError(Exception):
    pass


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class UnsupportedLinkType(DataError):
    pass


class EmptyStream(DataError):
    pass


class BadLength(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class EmptyClass(DataError):
    pass


class EmptyTraining(DataError):
    pass


class BadConfig(DataError):
    pass
