class PerlaError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(PerlaError, ValueError):
    """Malformed or inconsistent input data."""


class SamplerError(PerlaError, RuntimeError):
    """The MCMC run could not continue (e.g. a non-finite log-likelihood)."""

    def __init__(self, message, iteration=None, chain=None):
        super().__init__(message)
        self.iteration = iteration
        self.chain = chain
