"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad user input: configs, parameters, or incompatible arguments."""


class SolverError(RuntimeError):
    """Numerical failure inside a solver (singular regression, overflow, ...)."""


class ResourceError(RuntimeError):
    """Resource exhaustion (memory); never silently truncated output."""
