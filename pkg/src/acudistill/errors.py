"""Exception hierarchy. The CLI maps each family to its own exit code."""


class AcuError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AcuError):
    pass


class DataError(AcuError, ValueError):
    """Input data violates a precondition (empty matrix, bad shape, ...)."""


class ParseError(DataError):
    pass


class NumericalError(AcuError, ArithmeticError):
    pass


class ConvergenceError(NumericalError):
    """The Jacobi eigensolver ran out of sweeps.

    ``residual`` is the relative off-diagonal Frobenius norm reached.
    """

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class StoreError(AcuError):
    pass


class ChecksumError(StoreError):
    pass


class KindError(StoreError):
    pass


class VersionError(StoreError):
    pass
