"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes or site specifications do not agree."""


class NonFiniteError(ArithmeticError):
    """An input or intermediate value is NaN or infinite."""


class RankDeficiencyError(ValueError):
    """A matrix is too close to singular for the requested operation."""


class GuardExceededError(ValueError):
    """A dense representation would exceed the configured element guard."""
