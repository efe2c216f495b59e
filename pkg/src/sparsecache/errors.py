"""Exception hierarchy.

Every error derives from :class:`SparseCacheError`; input problems are also
``ValueError`` so callers that only catch builtins still see them. The CLI maps
:class:`ConstraintError` subclasses to exit code 3 and every other error to 2.
"""


class SparseCacheError(Exception):
    pass


class InputError(SparseCacheError, ValueError):
    pass


class ConstraintError(SparseCacheError, ValueError):
    pass


class AllZero(InputError):
    pass


class BadLength(InputError):
    pass


class LengthMismatch(InputError):
    pass


class BadDelta(InputError):
    pass


class BadParams(InputError):
    pass


class BadDecay(InputError):
    pass


class BadRange(InputError):
    pass


class BadDrift(InputError):
    pass


class DepthOutOfRange(InputError):
    pass


class NoSamples(InputError):
    pass


class EmptyTrace(InputError):
    pass


class TraceFormatError(InputError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BudgetTooLarge(ConstraintError):
    pass


class PlannerError(SparseCacheError):
    pass
