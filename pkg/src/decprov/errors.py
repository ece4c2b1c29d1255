"""Exception hierarchy shared by every decprov module."""


class DecProvError(Exception):
    """Base class for domain errors (CLI maps these to exit code 1)."""


class InvalidRecord(DecProvError):
    """A payload violates its type invariants."""


class DanglingReference(DecProvError):
    pass


class TemporalViolation(DecProvError):
    pass


class DuplicateId(DecProvError):
    pass


class UnknownId(DecProvError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class IoFailure(DecProvError):
    pass


class IntegrityError(DecProvError):
    """The hash chain of a log does not verify."""


class BadWindow(DecProvError):
    pass


class MalformedPattern(DecProvError):
    pass


class MalformedRule(DecProvError):
    pass


class CategoryMismatch(DecProvError):
    pass


class VersionRegression(DecProvError):
    pass


class InvalidSpec(DecProvError):
    pass


class WindowOutOfRange(DecProvError):
    pass


class UnknownThread(DecProvError):
    pass
