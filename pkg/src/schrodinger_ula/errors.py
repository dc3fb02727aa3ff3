"""Exception types raised across the package."""


class SchrodingerULAError(Exception):
    """Base class for all package errors."""


class NumericalError(SchrodingerULAError):
    """Numerical failure (maps to CLI exit code 3)."""


class ConfigError(SchrodingerULAError, ValueError):
    """Invalid configuration (maps to CLI exit code 2)."""


class NonPositivePotential(NumericalError, ValueError):
    pass


class SingularSystem(NumericalError):
    pass


class OutOfDomain(SchrodingerULAError, ValueError):
    pass


class InverseDomain(NumericalError, ValueError):
    pass


class DegenerateN(ConfigError):
    pass


class NonFiniteIterate(NumericalError):
    """An iterate left the finite reals; usually the step size is too large.

    ``partial`` holds whatever output was produced before the failure.
    """

    def __init__(self, message, iteration=None, partial=None):
        super().__init__(message)
        self.iteration = iteration
        self.partial = partial


class MaxItersExceeded(NumericalError):
    def __init__(self, message, theta=None, trace=None):
        super().__init__(message)
        self.theta = theta
        self.trace = trace


class EmptyWindow(SchrodingerULAError, ValueError):
    pass


class EmptySample(SchrodingerULAError, ValueError):
    pass


class NonPositiveU(NumericalError):
    pass


class BoxTooSmall(NumericalError):
    pass
