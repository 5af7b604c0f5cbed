"""Exception types shared across the package."""


class RegimeHedgeError(Exception):
    """Base class for all engine errors."""


class ConfigError(RegimeHedgeError):
    """Invalid scenario configuration; carries the offending config path."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class TruncationFailure(RegimeHedgeError):
    """Joint survival did not decay below threshold within the hard cap."""


class RootFindFailure(RegimeHedgeError):
    """Hazard clock inversion failed (cumulative hazard not increasing)."""


class SingularCovariance(RegimeHedgeError):
    """Inter-jump log covariance is not positive definite."""


class DimensionTooLarge(RegimeHedgeError):
    """Tensor quadrature requested above the configured dimension cap."""


class NoConvergence(RegimeHedgeError):
    """Fixed-point iteration hit max_iter; signals grid/quadrature misconfiguration."""

    def __init__(self, message: str, report=None):
        self.report = report
        super().__init__(message)
