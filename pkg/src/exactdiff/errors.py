class DomainError(ValueError):
    """Argument outside the domain where a quantity is defined."""


class NumericError(ArithmeticError):
    """A numerical procedure failed to converge or exceeded its iteration cap."""


class ResourceCapExceeded(RuntimeError):
    """A run consumed more random variates than its configured budget."""

    def __init__(self, message: str, variates: int = 0):
        super().__init__(message)
        self.variates = variates
