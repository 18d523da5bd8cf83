"""Monitored non-interacting fermions: Gaussian-state trajectories and scaling analysis."""

from .exceptions import (
    AggregationError,
    ConfigurationError,
    DomainError,
    FitError,
    InsufficientDataError,
    NumericalDriftError,
    RankDeficiencyError,
    WindowError,
)
from .gaussian import (
    correlation_from_state,
    entanglement_entropy,
    neel_state,
    project_to_rank_N,
    renormalize,
)
from .lattice import Lattice, chord_distance
from .observables import (
    BlockGeometry,
    CorrProfile,
    ObservableSet,
    aggregate,
    bin_by_distance,
    covariance_blocks,
    density_correlator,
    mutual_information,
    proportionality_check,
)
from .pm import PmConfig, measure_site, run_pm_trajectory, sample_waiting_time, unitary_step
from .qsd import QsdConfig, qsd_generator, qsd_step, run_qsd_trajectory
from .records import TrajectoryRecord

__version__ = "0.1.0"
