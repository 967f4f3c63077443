"""Exception hierarchy shared by all istab modules."""


class IstabError(Exception):
    """Base class for errors raised by istab."""


class InvalidArgumentError(IstabError, ValueError):
    pass


class GeometryError(IstabError):
    pass


class CapabilityError(IstabError):
    """Requested size or degree exceeds what the implementation supports."""


class DataError(IstabError, ValueError):
    """Problem data evaluated to a non-finite value."""


class CondensationError(IstabError):
    """A cell block could not be factorized during static condensation."""

    def __init__(self, cell, message):
        self.cell = cell
        super().__init__(f"cell {cell}: {message}")


class SolveError(IstabError):
    pass


class ConfigError(IstabError, ValueError):
    pass


class DegenerateNormError(IstabError):
    """A norm Gram matrix is not positive definite."""
