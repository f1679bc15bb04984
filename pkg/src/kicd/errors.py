"""Exception types shared across the package."""


class KicdError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(KicdError, ValueError):
    pass


class InvalidInputError(KicdError, ValueError):
    pass


class CycleError(InvalidInputError):
    """Raised when a graph that must be acyclic contains a directed cycle."""

    def __init__(self, cycle):
        self.cycle = list(cycle)
        path = " -> ".join(str(v) for v in self.cycle + self.cycle[:1])
        super().__init__(f"directed cycle detected: {path}")


class NumericalInstabilityError(KicdError, ArithmeticError):
    pass


class ResourceBudgetError(KicdError, RuntimeError):
    pass
