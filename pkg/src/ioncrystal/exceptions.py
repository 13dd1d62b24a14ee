"""Exception hierarchy shared by the numerical modules."""


class NumericalError(RuntimeError):
    """Base class for failures of a numerical routine (non-convergence, instability)."""


class ConvergenceError(NumericalError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class UnstableCrystalError(NumericalError):
    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class ConsistencyError(NumericalError):
    """An internal identity (symmetry, non-negativity) was violated beyond round-off."""


class AlignmentError(NumericalError):
    """Eigenvectors could not be matched between successive sweep steps."""
