"""Exception hierarchy shared by the solver modules and the CLI."""


class FracbasisError(Exception):
    """Base class for all library errors."""


class InvalidArgument(FracbasisError, ValueError):
    pass


class DimensionError(FracbasisError, ValueError):
    pass


class NumericError(FracbasisError, ArithmeticError):
    pass


class FittingError(FracbasisError):
    """Raised when the greedy fit cannot solve its Gram system."""

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class ParseError(FracbasisError, ValueError):
    """Malformed approximant document; ``location`` names the offending field."""

    def __init__(self, message, location=""):
        text = f"{location}: {message}" if location else message
        super().__init__(text)
        self.location = location


class UnsupportedConfiguration(FracbasisError):
    pass


class SolverBreakdown(FracbasisError):
    """A Krylov iteration lost positive definiteness."""
