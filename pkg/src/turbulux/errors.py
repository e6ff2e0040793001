"""Exception types raised across the package."""


class TurbuluxError(Exception):
    """Base class; ``module`` names the subsystem that raised it."""

    module = "turbulux"


class ConfigError(TurbuluxError, ValueError):
    module = "channel"


class QuadratureError(TurbuluxError, ArithmeticError):
    """Adaptive integration stopped before reaching the requested tolerance.

    The best available estimate and its error indicator are kept on the
    exception so callers may decide to accept them.
    """

    module = "numerics"

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class ConvergenceError(TurbuluxError, ArithmeticError):
    module = "numerics"

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class MomentError(TurbuluxError, ValueError):
    """Moment values that no probability distribution can have."""

    module = "matching"


class CalibrationError(TurbuluxError, RuntimeError):
    module = "matching"

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class AnalyticError(TurbuluxError, ValueError):
    module = "analytic"


class GridError(TurbuluxError, ValueError):
    module = "simulator"


class SimulationError(TurbuluxError, RuntimeError):
    module = "simulator"

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SampleError(TurbuluxError, ValueError):
    module = "stats"


class QuantumError(TurbuluxError, ValueError):
    module = "quantum"
