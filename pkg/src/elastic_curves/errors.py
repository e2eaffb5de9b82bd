"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class CurveCsvError(ValidationError):
    """Raised on malformed curve CSV input; carries the offending row number."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class RankDeficientError(ValidationError):
    """Raised when a least-squares design cannot identify all coefficients."""


class GradientUndefinedError(ArithmeticError):
    """Raised when the warp-score gradient is evaluated at coincident knots.

    Adjacent equal entries in the warp vector make the objective only
    semi-differentiable there; callers fall back to coordinate moves.
    """
