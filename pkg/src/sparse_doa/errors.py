class SparseDoaError(Exception):
    """Base class for package errors."""

    category = "runtime"


class GeometryError(SparseDoaError, ValueError):
    category = "validation"


class SingularCovariance(SparseDoaError):
    pass


class DegenerateDirection(SparseDoaError):
    pass


class BudgetExceeded(SparseDoaError):
    category = "validation"


class AllDegenerate(SparseDoaError):
    pass


class InfeasibleConstraint(SparseDoaError):
    pass


class FormatError(SparseDoaError):
    """Dataset / model file is truncated, corrupted or incompatible."""

    category = "format"


class ChecksumError(FormatError):
    pass


class ShapeMismatch(SparseDoaError, ValueError):
    category = "validation"


class CatalogMismatch(SparseDoaError):
    category = "validation"


class DivergenceError(SparseDoaError):
    def __init__(self, epoch, message=None):
        super().__init__(message or f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class EstimationFailure(SparseDoaError):
    pass


class SchemaMismatch(SparseDoaError, ValueError):
    category = "validation"
