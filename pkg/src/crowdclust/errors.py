"""Exception types shared across the package.

Two families matter for the CLI exit-code contract: bad user input
(ValidationError -> exit 1) and infeasible/runtime failures
(FeasibilityError -> exit 2).
"""


class ValidationError(ValueError):
    """Malformed or out-of-contract input (files, parameters, dimensions)."""


class FeasibilityError(RuntimeError):
    """A requested operation cannot be satisfied (e.g. masking target too sparse)."""
