"""Exception types shared across the package."""


class FasimError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(FasimError, ValueError):
    """Input data or parameters violate a documented precondition."""


class CsvParseError(InvalidInputError):
    """A CSV cell could not be parsed; the message names the offending row."""


class DegenerateInputError(FasimError):
    """The input matrix is numerically degenerate (e.g. all eigenvalues ~ 0)."""


class RankDeficiencyError(FasimError):
    """Requested more factors than the numerical rank supports."""

    def __init__(self, index: int, eigenvalue: float):
        self.index = index
        self.eigenvalue = eigenvalue
        super().__init__(
            f"eigenvalue {index} is {eigenvalue:.3e}, below the rank tolerance; "
            f"cannot extract {index} factors"
        )


class InconsistentFactorsError(FasimError):
    """A factor matrix does not satisfy the scaling constraint F'F/n = I."""
