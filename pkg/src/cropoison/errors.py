"""Exception types raised across the package."""


class DomainError(ValueError):
    """An input lies outside the domain an operation is defined on."""


class PlacementError(DomainError):
    """An object or trigger cannot be placed without overlap or clipping."""


class QuadratureError(ArithmeticError):
    """Piecewise quadrature did not reach its tolerance within budget.

    The best available estimate is kept on ``partial`` and its error bound
    on ``abs_error`` so callers can decide whether to use it anyway.
    """

    def __init__(self, message: str, partial: float, abs_error: float):
        super().__init__(message)
        self.partial = partial
        self.abs_error = abs_error
