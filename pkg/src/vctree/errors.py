"""Exception types shared across the package."""


class VCTreeError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(VCTreeError):
    """Shapes of the operands do not line up."""


class EmptyTapeError(VCTreeError):
    """backward() was called on a value no recorded operation produced."""


class ValidationError(VCTreeError):
    """An input object violates its documented invariants."""


class ConfigError(VCTreeError):
    """A configuration file or argument is malformed or inconsistent."""


class NonFiniteError(VCTreeError):
    """A gradient or parameter stopped being finite."""
