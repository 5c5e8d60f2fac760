"""Exception hierarchy shared by every module."""


class ParameterError(ValueError):
    """An argument is out of range, mis-shaped or otherwise invalid."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""

    def __init__(self, message, *, step=None, index=None):
        super().__init__(message)
        self.step = step
        self.index = index


class SolverError(NumericError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message, *, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
