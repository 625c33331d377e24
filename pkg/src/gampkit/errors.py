"""Exception hierarchy shared by every gampkit module."""


class GampkitError(Exception):
    """Base class for all errors raised by gampkit."""


class DomainError(GampkitError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericError(GampkitError, ArithmeticError):
    """A numerical routine failed to reach its target accuracy.

    ``achieved`` carries the residual or error estimate at failure.
    """

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class DegenerateColumnError(DomainError):
    """A column of ``A`` is identically zero, so ``1 / (S^T tau_s)`` is undefined."""


class DivergenceError(NumericError):
    """An iteration produced a non-finite value; ``state`` is the last finite iterate."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class PreconditionError(GampkitError, ValueError):
    """A solver was asked to handle a problem outside its stated preconditions."""


class ConfigError(GampkitError, ValueError):
    """Malformed JSON descriptor; ``path`` locates the offending entry."""

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path
