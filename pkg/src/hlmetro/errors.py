"""Exception hierarchy shared by all modules."""


class HlmetroError(Exception):
    """Base class."""


class ValidationError(HlmetroError, ValueError):
    """Bad input, configuration or file contents."""


class StructureError(ValidationError):
    """Shape, dimension or index mismatch."""


class ResourceError(HlmetroError):
    """A size cap or truncation budget would be exceeded."""


class DomainError(ValidationError):
    """A formula was called outside the parameter range where it holds."""


class DegenerateBranchError(HlmetroError):
    """A measurement branch with (numerically) zero probability was requested."""


class NumericalAssertionError(HlmetroError, AssertionError):
    """A certified bound or invariant failed during a computation."""
