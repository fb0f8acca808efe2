"""Exception types shared across the package.

Invalid arguments raise the builtin :class:`ValueError`; the classes below
cover the failure modes that callers may want to catch separately.
"""


class NumericFailure(ArithmeticError):
    """A factorization or solve failed even after jitter escalation."""


class UnsupportedOperation(TypeError):
    """The requested path needs a linear operator or identity decoder."""


class FitFailure(RuntimeError):
    """EM could not produce a usable mixture within its restart budget."""
