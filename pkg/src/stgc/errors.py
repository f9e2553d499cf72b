"""Exception hierarchy shared across the package."""


class StgcError(Exception):
    """Base class for all stgc errors."""


class ParseError(StgcError):
    """Malformed input file; message carries the 1-based line number."""


class ValidationError(StgcError):
    """Input violates a documented precondition."""


class ComputationError(StgcError):
    """A pipeline stage failed on valid input (degenerate data, divergence)."""
