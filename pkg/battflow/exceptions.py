"""Exception hierarchy shared by all battflow modules."""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"


class BattflowError(Exception):
    """Base class for every error raised by battflow."""


class SparseAssemblyError(BattflowError, ValueError):
    """Triplet entry outside the declared matrix shape."""


class SingularMatrixError(BattflowError, ArithmeticError):
    """Numerically singular matrix met during factorization."""

    def __init__(self, message, column=None, block=None):
        super().__init__(message)
        self.column = column
        self.block = block

    def __str__(self):
        text = super().__str__()
        if self.block is not None:
            text = f"{text} (block t={self.block})"
        if self.column is not None:
            text = f"{text} (pivot column {self.column})"
        return text


class AsymmetricMatrixError(BattflowError, ValueError):
    """Symmetric factorization requested for an asymmetric matrix."""


class CaseValidationError(BattflowError, ValueError):
    """Case document violates the schema or a case invariant."""

    def __init__(self, message, matrix=None, row=None, col=None):
        if matrix is not None and row is not None and col is not None:
            message = f"{matrix.upper()}({row},{col}): {message}"
        elif matrix is not None and row is not None:
            message = f"{matrix.upper()}({row}): {message}"
        elif matrix is not None:
            message = f"{matrix.upper()}: {message}"
        super().__init__(message)
        self.matrix = matrix
        self.row = row
        self.col = col


class NetworkError(BattflowError, ValueError):
    """Electrical data that cannot be evaluated (zero impedance, zero voltage)."""


class LayoutError(BattflowError, ValueError):
    """Array or matrix dimensions do not match the problem layout."""


class ConvergenceError(BattflowError):
    """The interior point method stopped without meeting its tolerances."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class MaxIterError(ConvergenceError):
    """Iteration limit reached."""


class StepCollapseError(ConvergenceError):
    """Step length vanished or the iterate became non-finite."""
