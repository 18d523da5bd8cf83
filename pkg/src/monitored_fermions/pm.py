"""Projective occupation measurements at exponentially distributed times.

Between events the state evolves unitarily under the hopping Hamiltonian;
at each event a uniformly chosen site ``j`` is measured with Born
probability ``p_j = D_jj`` and the state is projected.

Random numbers are drawn in a fixed order, which the exact reference in
:mod:`monitored_fermions.oracle` reproduces: one waiting time up front,
then per event the site (``rng.integers(L)``), the Born threshold
(``rng.random()``) and the next waiting time.

Two interchangeable backends are provided:

``"correlation"``
    Evolves ``D`` in the site basis, applies the projection formulas to
    ``D`` and rebuilds orthonormal orbitals from an eigendecomposition
    after every measurement. Cost ``O(L^3)`` per event.
``"orbital"`` (default)
    Keeps the orbitals in the eigenbasis of the Hamiltonian, where unitary
    evolution is a phase per mode, and applies each projection as an exact
    rank-one orbital update. Cost ``O(L N)`` per event, with a QR
    re-orthonormalization every ``reorthonormalize_every`` events.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import CheckpointPolicy
from .exceptions import ConfigurationError, DomainError
from .gaussian import (
    correlation_from_state,
    neel_state,
    orthonormality_error,
    project_to_rank_N,
    renormalize,
)
from .lattice import Lattice
from .observables import ObservableSet, measure
from .records import TrajectoryRecord

# below this, the drawn branch is numerically impossible and the other one is applied
IMPOSSIBLE_TOL = 1e-12
REPRESENTATIONS = ("orbital", "correlation")
RATES = ("particle", "site")


@dataclass
class PmConfig:
    """Parameters of one projective-measurement trajectory.

    ``rate="particle"`` gives a total event rate ``gamma * N`` with
    ``N = L/2``; ``rate="site"`` gives ``gamma * L``.
    """

    gamma: float
    t_max: float
    sample_times: list[float] | None = None
    J: float = 1.0
    rate: str = "particle"
    representation: str = "orbital"
    reorthonormalize_every: int = 16

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigurationError(f"gamma must be positive, got {self.gamma}")
        if not self.t_max > 0:
            raise ConfigurationError(f"t_max must be positive, got {self.t_max}")
        if self.rate not in RATES:
            raise ConfigurationError(f"rate must be one of {RATES}")
        if self.representation not in REPRESENTATIONS:
            raise ConfigurationError(f"representation must be one of {REPRESENTATIONS}")
        if self.reorthonormalize_every < 1:
            raise ConfigurationError("reorthonormalize_every must be >= 1")
        if self.sample_times is None:
            self.sample_times = np.linspace(self.t_max / 2, self.t_max, 4).tolist()
        s = sorted(float(t) for t in self.sample_times)
        if s and (s[0] < 0 or s[-1] > self.t_max):
            raise ConfigurationError(f"sample times must lie in [0, {self.t_max}]")
        self.sample_times = s

    def event_rate(self, lat: Lattice) -> float:
        count = lat.n_particles if self.rate == "particle" else lat.n_sites
        return self.gamma * count


@dataclass(frozen=True)
class PmEvent:
    time: float
    site: int
    occupied: bool
    born_probability: float


def waiting_time_from_uniform(eta: float, gamma: float, N: int) -> float:
    """Inverse-CDF exponential sample ``-ln(eta) / (gamma N)`` for ``eta`` in (0, 1]."""
    return -math.log(eta) / (gamma * N)


def sample_waiting_time(gamma: float, N: int, rng: np.random.Generator) -> float:
    if not gamma > 0 or N < 1:
        raise DomainError(f"need gamma > 0 and N >= 1, got gamma={gamma}, N={N}")
    # rng.random() is in [0, 1); 1 - u is in (0, 1]
    return waiting_time_from_uniform(1.0 - rng.random(), gamma, N)


class SpectralPropagator:
    """``exp(-i H tau)`` for a fixed real symmetric ``H`` via one eigendecomposition."""

    def __init__(self, H: np.ndarray):
        H = np.asarray(H)
        if not np.array_equal(H, H.T):
            raise DomainError("hopping matrix must be symmetric")
        self.energies, self.modes = np.linalg.eigh(H)

    def phases(self, tau: float) -> np.ndarray:
        return np.exp(-1j * self.energies * tau)

    def evolve_correlation(self, D: np.ndarray, tau: float) -> np.ndarray:
        V = self.modes
        ph = self.phases(tau)
        Dm = V.T @ D @ V
        Dm = ph[:, None] * Dm * ph.conj()[None, :]
        return V @ Dm @ V.T

    def evolve_orbitals(self, U: np.ndarray, tau: float) -> np.ndarray:
        V = self.modes
        return V @ (self.phases(tau)[:, None] * (V.T @ U))


def unitary_step(D: np.ndarray, H: np.ndarray, tau: float, propagator: SpectralPropagator | None = None):
    """``D -> exp(-i H tau) D exp(i H tau)``."""
    if tau < 0:
        raise DomainError(f"tau must be non-negative, got {tau}")
    if tau == 0:
        return D.copy()
    prop = propagator if propagator is not None else SpectralPropagator(H)
    return prop.evolve_correlation(D, tau)


def project_occupation(D: np.ndarray, j: int, occupied: bool) -> np.ndarray:
    """Correlation matrix after projecting site ``j`` onto ``n_j = 1`` or ``n_j = 0``.

    Occupied: ``D'_ik = D_ik - D_ij D_jk / D_jj`` off row/column ``j`` and
    ``D'_jj = 1``. Empty: ``D'_ik = D_ik + D_ij D_jk / (1 - D_jj)`` off
    row/column ``j`` and zero on it. Both follow from Wick's theorem.
    """
    p = D[j, j].real
    col = D[:, j].copy()
    row = D[j, :].copy()
    if occupied:
        out = D - np.outer(col, row) / p
    else:
        out = D + np.outer(col, row) / (1.0 - p)
    out[j, :] = 0.0
    out[:, j] = 0.0
    if occupied:
        out[j, j] = 1.0
    return out


def _branch(p: float, p_c: float) -> bool:
    occupied = p >= p_c
    if occupied and p < IMPOSSIBLE_TOL:
        return False
    if not occupied and 1.0 - p < IMPOSSIBLE_TOL:
        return True
    return occupied


def measure_site(D: np.ndarray, j: int, rng: np.random.Generator | None = None, *, p_c: float | None = None, time: float = float("nan")):
    """Born-sample the occupation of site ``j`` and project ``D``.

    The outcome is "occupied" iff ``D_jj >= p_c`` with ``p_c`` uniform on
    [0, 1), drawn from ``rng`` unless given explicitly.
    """
    L = D.shape[0]
    if not 0 <= j < L:
        raise DomainError(f"site {j} outside [0, {L})")
    if p_c is None:
        p_c = rng.random()
    p = float(D[j, j].real)
    occupied = _branch(p, p_c)
    return project_occupation(D, j, occupied), PmEvent(time, j, occupied, p)


class CorrelationBackend:
    def __init__(self, H: np.ndarray, U0: np.ndarray):
        self.prop = SpectralPropagator(H)
        self.N = U0.shape[1]
        self.set_orbitals(U0)

    def set_orbitals(self, U):
        self.U = U
        self.D = correlation_from_state(U)

    def evolve(self, tau):
        if tau > 0:
            self.D = self.prop.evolve_correlation(self.D, tau)

    def measure(self, j, p_c):
        p = float(self.D[j, j].real)
        occupied = _branch(p, p_c)
        D = project_occupation(self.D, j, occupied)
        self.set_orbitals(project_to_rank_N(D, self.N))
        return occupied, p

    def correlation(self):
        return self.D

    def orbitals(self):
        # site-basis orbitals matching D up to the evolution since the last event
        return self.U

    def sync(self):
        """Bring the state to a canonical form that a checkpoint reproduces exactly."""
        return self.U


class OrbitalBackend:
    """Orbitals ``W = V^T U`` in the Hamiltonian eigenbasis ``V`` (real)."""

    def __init__(self, H: np.ndarray, U0: np.ndarray, reorthonormalize_every: int = 16):
        self.prop = SpectralPropagator(H)
        self.V = self.prop.modes
        self.every = reorthonormalize_every
        self.since = 0
        self.set_orbitals(U0)

    def set_orbitals(self, U):
        self.W = self.V.T @ U

    def evolve(self, tau):
        if tau > 0:
            self.W *= self.prop.phases(tau)[:, None]

    def measure(self, j, p_c):
        vj = self.V[j, :]  # V^T e_j
        u = (vj @ self.W).conj()  # u = U^dag e_j
        p = float(np.vdot(u, u).real)
        occupied = _branch(p, p_c)
        if occupied and 1.0 - p < IMPOSSIBLE_TOL or not occupied and p < IMPOSSIBLE_TOL:
            # already an eigenstate of n_j up to rounding
            return occupied, p
        uh = u / math.sqrt(p)
        Wu = self.W @ uh  # V^T D e_j / sqrt(p)
        if occupied:
            target = vj
        else:
            # V^T (D e_j - p e_j) / sqrt(p (1 - p)), with D e_j = U u
            target = (math.sqrt(p) * Wu - p * vj) / math.sqrt(p * (1.0 - p))
        # U' = U (1 - uh uh^dag) + target uh^dag keeps U'^dag U' = 1 exactly
        self.W += np.outer(target - Wu, uh.conj())
        self.since += 1
        if self.since >= self.every:
            self.W = renormalize(self.W)
            self.since = 0
        return occupied, p

    def orbitals(self):
        return self.V @ self.W

    def correlation(self):
        return correlation_from_state(self.orbitals())

    def orthonormality_error(self):
        return orthonormality_error(self.W)

    def sync(self):
        U = renormalize(self.orbitals())
        self.set_orbitals(U)
        self.since = 0
        return U


def make_backend(cfg: PmConfig, H, U0):
    if cfg.representation == "correlation":
        return CorrelationBackend(H, U0)
    return OrbitalBackend(H, U0, cfg.reorthonormalize_every)


def run_pm_trajectory(
    cfg: PmConfig,
    lat: Lattice,
    seed: int,
    *,
    observables: ObservableSet | None = None,
    trajectory_id: int = 0,
    checkpoint: CheckpointPolicy | None = None,
    keep_states: bool = False,
    on_event=None,
) -> TrajectoryRecord:
    """Simulate one trajectory from the Neel state up to ``cfg.t_max``.

    Deterministic in ``(cfg, lat, seed)``. ``on_event(backend, event)`` is
    called after every measurement. Numerical-drift errors propagate.
    """
    obs = observables if observables is not None else ObservableSet.default(lat)
    rng = np.random.Generator(np.random.PCG64(seed))
    L = lat.n_sites
    H = lat.hopping_matrix(cfg.J)
    backend = make_backend(cfg, H, neel_state(lat))
    rate = cfg.event_rate(lat)
    samples = cfg.sample_times
    cadence = CheckpointPolicy.cadence(cfg.t_max)
    record = TrajectoryRecord(trajectory_id, seed, "PM", cfg.gamma, lat.extents, cfg.t_max)

    t = 0.0
    k = 0
    next_sync = cadence
    if checkpoint is not None and checkpoint.exists():
        U, hdr = checkpoint.load()
        backend.set_orbitals(U)
        t = hdr["time"]
        rng.bit_generator.state = hdr["rng_state"]
        ex = hdr["extra"]
        next_event, next_sync, k = ex["next_event"], ex["next_sync"], ex["next_sample"]
        record.restore_snapshots(ex["snapshots"])
    else:
        next_event = waiting_time_from_uniform(1.0 - rng.random(), rate, 1)

    while True:
        while k < len(samples) and samples[k] <= min(next_event, cfg.t_max):
            backend.evolve(samples[k] - t)
            t = samples[k]
            D = backend.correlation()
            record.add(t, measure(D, lat, obs), D.copy() if keep_states else None)
            k += 1
        if next_event > cfg.t_max:
            break
        backend.evolve(next_event - t)
        t = next_event
        j = int(rng.integers(L))
        p_c = rng.random()
        occupied, p = backend.measure(j, p_c)
        record.n_events += 1
        if on_event is not None:
            on_event(backend, PmEvent(t, j, occupied, p))
        next_event = t + waiting_time_from_uniform(1.0 - rng.random(), rate, 1)
        if t >= next_sync:
            U = backend.sync()
            next_sync += cadence
            if checkpoint is not None:
                checkpoint.save(
                    U,
                    extents=lat.extents,
                    time=t,
                    rng_state=rng.bit_generator.state,
                    extra={
                        "protocol": "PM",
                        "next_event": next_event,
                        "next_sync": next_sync,
                        "next_sample": k,
                        "snapshots": record.snapshot_payload(),
                    },
                )
    return record
