"""Exception hierarchy shared by all modules."""


class HomogError(Exception):
    """Base class for every error raised by the package."""


class GridError(HomogError, ValueError):
    pass


class KernelError(HomogError, ValueError):
    pass


class CompatibilityViolation(HomogError):
    """A right-hand side is not in the range of the operator being inverted.

    ``moment`` names the failing solvability moment and ``defect`` carries
    its measured value.
    """

    def __init__(self, message, moment=None, defect=None):
        super().__init__(message)
        self.moment = moment
        self.defect = defect


class RangeViolation(CompatibilityViolation):
    """Range condition failure for the cell elliptic operators."""


class SingularSystem(HomogError):
    pass


class KernelNotSimple(HomogError):
    pass


class NonPositive(HomogError):
    pass


class NonPositiveGap(HomogError):
    pass


class EllipticityFailure(HomogError):
    pass


class IndefiniteTensor(HomogError):
    pass


class SolverStall(HomogError):
    def __init__(self, message, residual=None, solution=None):
        super().__init__(message)
        self.residual = residual
        self.solution = solution


class IterativeSolverStall(SolverStall):
    pass


class ResolutionError(HomogError, ValueError):
    pass


class ConfigError(HomogError, ValueError):
    pass
