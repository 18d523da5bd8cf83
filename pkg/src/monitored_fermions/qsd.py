"""Continuous monitoring of all occupations (quantum state diffusion).

Each step of length ``dt`` draws one Gaussian increment per site,
``dW_i ~ N(0, gamma dt)``, and advances the orbitals with the classical
fourth-order Runge-Kutta scheme applied to ``dU/ds = M U`` with

    M = -i H + diag(dW) / dt + gamma * diag(2 <n> - 1),

where the increment and the occupations ``<n_i> = sum_k |U_ik|^2`` are
frozen at their values at the start of the step. The integral of ``M``
over the step is therefore exactly the exponent of the per-step
propagator. A Householder QR then restores ``U^dag U = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import CheckpointPolicy
from .exceptions import ConfigurationError
from .gaussian import correlation_from_state, neel_state, renormalize
from .lattice import Lattice
from .observables import ObservableSet, measure
from .records import TrajectoryRecord

MAX_DT = 0.1


@dataclass
class QsdConfig:
    gamma: float
    t_max: float
    dt: float = 0.05
    J: float = 1.0
    sample_times: list[float] | None = None
    n_samples: int = 33
    rk4_substeps: int = 1

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigurationError(f"gamma must be positive, got {self.gamma}")
        if not 0 < self.dt <= MAX_DT:
            raise ConfigurationError(f"dt must lie in (0, {MAX_DT}], got {self.dt}")
        if not self.t_max > 0:
            raise ConfigurationError(f"t_max must be positive, got {self.t_max}")
        if int(self.rk4_substeps) != self.rk4_substeps or self.rk4_substeps < 1:
            raise ConfigurationError(f"rk4_substeps must be a positive integer, got {self.rk4_substeps}")
        if self.sample_times is None:
            self.sample_times = np.linspace(self.t_max / 2, self.t_max, self.n_samples).tolist()
        s = sorted(float(t) for t in self.sample_times)
        if s and (s[0] < 0 or s[-1] > self.t_max + 1e-12):
            raise ConfigurationError(f"sample times must lie in [0, {self.t_max}]")
        self.sample_times = s

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    def sample_steps(self) -> list[int]:
        """Sample times snapped to the step grid (duplicates removed)."""
        steps = sorted({int(round(t / self.dt)) for t in self.sample_times})
        return [s for s in steps if s <= self.n_steps]


def draw_noise(n_sites: int, gamma: float, dt: float, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(gamma * dt), size=n_sites)


def occupations(U: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", U, U.conj()).real


def qsd_generator(U, H, dW, gamma, dt, occupation=None):
    """Right-hand side ``M U`` of the per-step linear equation.

    ``occupation`` defaults to the occupations of ``U`` itself; the
    integrator passes the values frozen at the start of the step.
    """
    n = occupations(U) if occupation is None else occupation
    d = np.asarray(dW) / dt + gamma * (2.0 * n - 1.0)
    return -1j * (H @ U) + d[:, None] * U


def advance(U, H, dW, gamma, dt, renorm=True, substeps=1):
    """One noise step: RK4 with fixed ``dW`` and occupations, then QR re-orthonormalization.

    ``substeps > 1`` splits the step into that many RK4 stages of length
    ``dt / substeps`` with the same frozen generator; the default single
    stage is the plain fixed-step scheme.
    """
    n = occupations(U)
    h = dt / substeps
    half = 0.5 * h
    out = U
    for _ in range(substeps):
        k1 = qsd_generator(out, H, dW, gamma, dt, n)
        k2 = qsd_generator(out + half * k1, H, dW, gamma, dt, n)
        k3 = qsd_generator(out + half * k2, H, dW, gamma, dt, n)
        k4 = qsd_generator(out + h * k3, H, dW, gamma, dt, n)
        out = out + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return renormalize(out) if renorm else out


def _hopping(lat: Lattice, J: float):
    # sparse product is faster once rows have only 2-4 entries
    return lat.hopping_operator(J) if lat.n_sites > 32 else lat.hopping_matrix(J)


def qsd_step(U, cfg: QsdConfig, rng: np.random.Generator, H=None):
    """Draw one noise vector and advance ``U`` by ``cfg.dt``."""
    L = U.shape[0]
    if H is None:
        H = _hopping(Lattice.ring(L), cfg.J)
    dW = draw_noise(L, cfg.gamma, cfg.dt, rng)
    return advance(U, H, dW, cfg.gamma, cfg.dt, substeps=cfg.rk4_substeps)


def evolve_with_noise(U, H, gamma, dt, increments, callback=None, substeps=1):
    """Advance ``U`` through a prescribed sequence of noise vectors.

    ``callback(step, U)`` runs after each step (``step`` counts from 1).
    """
    for s, dW in enumerate(increments, start=1):
        U = advance(U, H, dW, gamma, dt, substeps=substeps)
        if callback is not None:
            callback(s, U)
    return U


def run_qsd_trajectory(
    cfg: QsdConfig,
    lat: Lattice,
    seed: int,
    *,
    observables: ObservableSet | None = None,
    trajectory_id: int = 0,
    checkpoint: CheckpointPolicy | None = None,
    keep_states: bool = False,
    on_step=None,
) -> TrajectoryRecord:
    """Simulate one diffusive trajectory from the Neel state up to ``cfg.t_max``."""
    obs = observables if observables is not None else ObservableSet.default(lat)
    rng = np.random.Generator(np.random.PCG64(seed))
    L = lat.n_sites
    H = _hopping(lat, cfg.J)
    U = neel_state(lat)
    steps = cfg.sample_steps()
    cadence_steps = max(1, int(round(CheckpointPolicy.cadence(cfg.t_max) / cfg.dt)))
    record = TrajectoryRecord(trajectory_id, seed, "QSD", cfg.gamma, lat.extents, cfg.t_max)

    step = 0
    k = 0
    if checkpoint is not None and checkpoint.exists():
        U, hdr = checkpoint.load()
        rng.bit_generator.state = hdr["rng_state"]
        step, k = hdr["extra"]["step"], hdr["extra"]["next_sample"]
        record.restore_snapshots(hdr["extra"]["snapshots"])

    def snapshot():
        D = correlation_from_state(U)
        record.add(step * cfg.dt, measure(D, lat, obs), D.copy() if keep_states else None)

    while True:
        while k < len(steps) and steps[k] == step:
            snapshot()
            k += 1
        if step >= cfg.n_steps:
            break
        dW = draw_noise(L, cfg.gamma, cfg.dt, rng)
        U = advance(U, H, dW, cfg.gamma, cfg.dt, substeps=cfg.rk4_substeps)
        step += 1
        record.n_events = step
        if on_step is not None:
            on_step(step, U)
        if checkpoint is not None and step % cadence_steps == 0 and step < cfg.n_steps:
            checkpoint.save(
                U,
                extents=lat.extents,
                time=step * cfg.dt,
                rng_state=rng.bit_generator.state,
                extra={
                    "protocol": "QSD",
                    "step": step,
                    "next_sample": k,
                    "snapshots": record.snapshot_payload(),
                },
            )
    return record
