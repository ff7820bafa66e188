class AOLError(Exception):
    """Base class for errors raised by aolearn."""


class DataError(AOLError, ValueError):
    """Invalid or malformed input data."""


class SolverError(AOLError, RuntimeError):
    """An optimizer met a non-finite objective or an infeasible start."""
