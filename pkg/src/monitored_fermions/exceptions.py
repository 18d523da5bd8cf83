"""Exception hierarchy shared by the simulators, fits and the runner."""


class MonitoredFermionsError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MonitoredFermionsError, ValueError):
    """Invalid user configuration (maps to CLI exit code 2)."""


class DomainError(MonitoredFermionsError, ValueError):
    """An argument lies outside the domain of an operation."""


class WindowError(DomainError):
    """A fit window contains unusable data (e.g. non-positive values)."""


class InsufficientDataError(MonitoredFermionsError, ValueError):
    """Too few points, trajectories or sizes for the requested analysis."""


class NumericalDriftError(MonitoredFermionsError, ArithmeticError):
    """A state left its admissible manifold beyond tolerance.

    ``deviation`` carries the measured worst-case violation.
    """

    def __init__(self, message, deviation=float("nan")):
        super().__init__(f"{message} (deviation={deviation:.3e})")
        self.deviation = deviation


class RankDeficiencyError(NumericalDriftError):
    """The orbital matrix lost column rank; the trajectory cannot continue."""


class AggregationError(MonitoredFermionsError, ValueError):
    """Records with incompatible metadata were merged."""


class FitError(MonitoredFermionsError, RuntimeError):
    """A nonlinear fit failed; ``best`` holds the best parameters seen."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class TrajectoryInterrupted(MonitoredFermionsError):
    """Raised by a checkpoint policy's ``halt_after`` to emulate a crash."""
