"""Exception hierarchy shared by all reshare modules."""


class ReshareError(Exception):
    """Base class for every error raised by the package."""


class FormatError(ReshareError):
    """Input file is structurally wrong (missing column, bad header)."""


class ValidationError(ReshareError, ValueError):
    """A value violates a documented invariant."""


class EmptyInputError(ReshareError):
    """No usable records were found in an input."""


class DomainError(ReshareError, ValueError):
    """An argument lies outside the domain of a mathematical function."""


class DivergenceError(ReshareError, ValueError):
    """A requested expectation or integral is infinite."""


class SupercriticalError(ReshareError):
    """A closed-form quantity needs n* < 1 but the model is supercritical."""


class ConvergenceError(ReshareError):
    """Every optimizer restart failed.

    ``best`` holds the best iterate seen (possibly ``None``) and
    ``diagnostics`` a list of per-restart messages.
    """

    def __init__(self, message, best=None, diagnostics=None):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics or []
