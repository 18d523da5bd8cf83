"""Observables of Gaussian states and their trajectory/time aggregation.

Sign convention: the density correlator ``C_ij = -|D_ij|^2`` is never
positive. Profiles store ``C`` itself; fits and CSV files consume
``-C`` (column ``neg_C_mean``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .exceptions import AggregationError, DomainError
from .gaussian import entanglement_entropy
from .lattice import Lattice, chord_distance
from .records import TrajectoryRecord

MI_PREFACTOR = 2.0 * math.pi**2 / 3.0


def density_correlator(D: np.ndarray) -> np.ndarray:
    """Connected density-density correlator ``C_ij = -D_ij D_ji`` for ``i != j``.

    The diagonal is excluded from every distance bin and holds NaN.
    """
    C = -(D * D.T).real
    np.fill_diagonal(C, np.nan)
    return C


@dataclass(frozen=True)
class DistanceBins:
    r_values: np.ndarray
    groups: tuple  # flat indices into an (n, n) matrix, one array per bin
    pair_count: np.ndarray


@lru_cache(maxsize=32)
def distance_bins(lat: Lattice) -> DistanceBins:
    """Ordered site pairs grouped by distance.

    1d uses the ring distance ``1..L/2``; 2d the Euclidean torus distance
    rounded to the nearest 0.5.
    """
    d = lat.distance_matrix()
    if lat.dimension == 2:
        d = np.round(2.0 * d) / 2.0
    n = lat.n_sites
    flat = d.ravel()
    mask = ~np.eye(n, dtype=bool).ravel()
    idx = np.flatnonzero(mask)
    keys = flat[idx]
    order = np.argsort(keys, kind="stable")
    idx, keys = idx[order], keys[order]
    r_values, starts, counts = np.unique(keys, return_index=True, return_counts=True)
    groups = tuple(idx[s : s + c] for s, c in zip(starts, counts))
    return DistanceBins(r_values, groups, counts.astype(int))


@dataclass
class CorrProfile:
    """Distance-binned correlator with per-bin statistics."""

    r_values: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    pair_count: np.ndarray
    stderr: np.ndarray | None = None
    n_trajectories: int = 1
    n_time_samples: int = 1
    gamma: float = float("nan")
    L: int = 0
    protocol: str = ""

    @property
    def neg_mean(self) -> np.ndarray:
        return -np.asarray(self.mean)

    def chord(self) -> np.ndarray:
        return chord_distance(self.L, self.r_values)

    def window(self, r_min, r_max) -> np.ndarray:
        r = np.asarray(self.r_values)
        return (r >= r_min) & (r <= r_max)


def _bin_means(C: np.ndarray, bins: DistanceBins) -> tuple[np.ndarray, np.ndarray]:
    flat = C.ravel()
    means = np.empty(len(bins.groups))
    var = np.empty(len(bins.groups))
    for k, g in enumerate(bins.groups):
        vals = flat[g]
        m = math.fsum(vals) / len(vals)
        means[k] = m
        var[k] = math.fsum((vals - m) ** 2) / len(vals)
    return means, var


def bin_by_distance(C: np.ndarray, lat: Lattice) -> CorrProfile:
    """Average ``C`` over all ordered pairs at each distance (exactly rounded sums)."""
    bins = distance_bins(lat)
    means, var = _bin_means(C, bins)
    return CorrProfile(
        r_values=bins.r_values.copy(),
        mean=means,
        variance=var,
        pair_count=bins.pair_count.copy(),
        L=lat.extents[0],
    )


@dataclass(frozen=True)
class BlockGeometry:
    """Two disjoint regions ``A`` and ``B``."""

    A: tuple[int, ...]
    B: tuple[int, ...]

    def __post_init__(self):
        a, b = tuple(sorted(set(self.A))), tuple(sorted(set(self.B)))
        if not a or not b:
            raise DomainError("block regions must be non-empty")
        if set(a) & set(b):
            raise DomainError("block regions overlap")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)

    @classmethod
    def standard(cls, lat: Lattice) -> "BlockGeometry":
        """Strips ``x in [0, L/4)`` and ``x in [L/2, 3L/4)``, separated by ``L/4`` on each side.

        In 2d each strip spans the full ``y`` extent (``L x L/4`` blocks).
        """
        Lx = lat.extents[0]
        if Lx % 4:
            raise DomainError(f"extent {Lx} is not a multiple of 4")
        x = np.arange(lat.n_sites) % Lx
        a = np.flatnonzero(x < Lx // 4)
        b = np.flatnonzero((x >= Lx // 2) & (x < 3 * Lx // 4))
        return cls(tuple(a.tolist()), tuple(b.tolist()))

    def union(self) -> np.ndarray:
        return np.asarray(sorted(self.A + self.B))


def covariance_blocks(D: np.ndarray, geom: BlockGeometry) -> float:
    """Particle-number covariance magnitude ``G_AB = sum_{i in A, j in B} |D_ij|^2``."""
    # canonical region order makes G_AB and G_BA the same floating-point sum
    P, Q = (geom.A, geom.B) if geom.A[0] < geom.B[0] else (geom.B, geom.A)
    block = D[np.ix_(P, Q)]
    return float(np.sum(np.abs(block) ** 2))


def mutual_information(D: np.ndarray, geom: BlockGeometry) -> float:
    return (
        entanglement_entropy(D, geom.A)
        + entanglement_entropy(D, geom.B)
        - entanglement_entropy(D, geom.union())
    )


@dataclass(frozen=True)
class ProportionalityDiagnostics:
    i2: float
    g_ab: float
    predicted: float
    ratio: float | None

    @property
    def defined(self) -> bool:
        return self.ratio is not None


def proportionality_check(i2: float, g_ab: float) -> ProportionalityDiagnostics:
    """Compare ``I2`` with its second-cumulant estimate ``(2 pi^2 / 3) G_AB``."""
    predicted = MI_PREFACTOR * g_ab
    ratio = None if predicted == 0 else i2 / predicted
    return ProportionalityDiagnostics(i2, g_ab, predicted, ratio)


def particle_number_variance(D: np.ndarray, region) -> float:
    """``Var(N_A) = sum_i D_ii (1 - D_ii) - sum_{i != j} |D_ij|^2`` over ``i, j`` in ``A``."""
    region = np.asarray(region, dtype=int)
    sub = D[np.ix_(region, region)]
    d = np.diag(sub).real
    off = np.sum(np.abs(sub) ** 2) - np.sum(d**2)
    return float(np.sum(d * (1 - d)) - off)


def cumulant_entropy(D: np.ndarray, region) -> float:
    """Second-cumulant entropy estimate ``(pi^2/3) Var(N_A)``; reported beside, never instead of, the EE."""
    return math.pi**2 / 3.0 * particle_number_variance(D, region)


@dataclass(frozen=True)
class ObservableSet:
    """Which observables a trajectory records at each sample time."""

    entropy: bool = True
    correlator: bool = True
    blocks: BlockGeometry | None = None

    @classmethod
    def default(cls, lat: Lattice) -> "ObservableSet":
        geom = BlockGeometry.standard(lat) if lat.extents[0] % 4 == 0 else None
        return cls(entropy=True, correlator=True, blocks=geom)


def measure(D: np.ndarray, lat: Lattice, obs: ObservableSet) -> dict:
    out = {}
    if obs.entropy:
        out["entropy"] = entanglement_entropy(D, lat.half_system())
    if obs.correlator:
        out["profile"] = _bin_means(density_correlator(D), distance_bins(lat))[0]
    if obs.blocks is not None:
        out["gab"] = covariance_blocks(D, obs.blocks)
        out["i2"] = mutual_information(D, obs.blocks)
    return out


@dataclass
class RunningStats:
    """Count, mean and centred second moment; ``merge`` is Chan's update."""

    n: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def from_samples(cls, x) -> "RunningStats":
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        if n == 0:
            return cls(0, np.zeros(x.shape[1:]), np.zeros(x.shape[1:]))
        mean = x.mean(axis=0)
        return cls(n, mean, ((x - mean) ** 2).sum(axis=0))

    def merge(self, other: "RunningStats") -> "RunningStats":
        if self.n == 0:
            return other
        if other.n == 0:
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        m2 = self.m2 + other.m2 + delta**2 * (self.n * other.n / n)
        return RunningStats(n, mean, m2)

    @property
    def variance(self):
        return self.m2 / (self.n - 1) if self.n > 1 else np.zeros_like(self.m2)

    @property
    def stderr(self):
        return np.sqrt(self.variance / self.n) if self.n else np.full_like(self.m2, np.nan)


def tree_merge(stats: list[RunningStats]) -> RunningStats:
    """Pairwise reduction in list order; the order fixes the rounding."""
    if not stats:
        raise AggregationError("nothing to aggregate")
    level = list(stats)
    while len(level) > 1:
        nxt = [level[k].merge(level[k + 1]) for k in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


@dataclass
class Aggregate:
    """Trajectory-level statistics.

    Each trajectory contributes one value per observable, its average over
    the time samples inside the window; means, variances and standard
    errors are taken over trajectories, because time samples of a single
    trajectory are correlated.
    """

    profile: CorrProfile | None
    entropy: RunningStats
    gab: RunningStats
    i2: RunningStats
    trajectory_ids: list
    trajectory_profiles: np.ndarray  # time-averaged C(r) per trajectory
    trajectory_values: dict  # name -> per-trajectory time averages
    n_time_samples: int
    gamma: float
    extents: tuple
    protocol: str
    meta: dict = field(default_factory=dict)

    @property
    def n_trajectories(self) -> int:
        return len(self.trajectory_ids)


def aggregate(records: list[TrajectoryRecord], window: tuple[float, float] | None = None) -> Aggregate:
    """Average time samples inside ``window`` (default ``[t_max/2, t_max]``), then pool trajectories.

    Records are merged pairwise in trajectory-id order, so the result does
    not depend on the order the records arrive in.
    """
    records = sorted((r for r in records if r.completed), key=lambda r: r.trajectory_id)
    if not records:
        raise AggregationError("no completed trajectories")
    ids = [r.trajectory_id for r in records]
    if len(set(ids)) != len(ids):
        raise AggregationError("duplicate trajectory ids")
    meta = records[0].metadata()
    for r in records[1:]:
        if r.metadata() != meta or not np.array_equal(r.times, records[0].times):
            raise AggregationError(
                f"trajectory {r.trajectory_id} metadata {r.metadata()} differs from {meta}"
            )
    protocol, gamma, extents, t_max = meta
    lo, hi = window if window is not None else (t_max / 2.0, t_max)
    times = np.asarray(records[0].times)
    sel = (times >= lo - 1e-12) & (times <= hi + 1e-12)
    if not sel.any():
        raise AggregationError(f"no sample times inside [{lo}, {hi}]")

    per = [r.arrays() for r in records]
    values = {k: np.array([a[k][sel].mean() for a in per]) for k in ("entropy", "gab", "i2")}

    def pooled(rows):
        return tree_merge([RunningStats.from_samples(np.asarray(x)[None]) for x in rows])

    profile = None
    traj_prof = np.empty((len(per), 0))
    if per[0]["profile"].shape[1]:
        lat = Lattice(extents)
        bins = distance_bins(lat)
        traj_prof = np.stack([a["profile"][sel].mean(axis=0) for a in per])
        pstats = pooled(traj_prof)
        profile = CorrProfile(
            r_values=bins.r_values.copy(),
            mean=pstats.mean,
            variance=pstats.variance,
            pair_count=bins.pair_count.copy(),
            stderr=pstats.stderr,
            n_trajectories=len(records),
            n_time_samples=int(sel.sum()),
            gamma=gamma,
            L=extents[0],
            protocol=protocol,
        )
    return Aggregate(
        profile=profile,
        entropy=pooled(values["entropy"]),
        gab=pooled(values["gab"]),
        i2=pooled(values["i2"]),
        trajectory_ids=ids,
        trajectory_profiles=traj_prof,
        trajectory_values=values,
        n_time_samples=int(sel.sum()),
        gamma=gamma,
        extents=extents,
        protocol=protocol,
        meta={"window": (lo, hi)},
    )


def trajectory_profile(agg: Aggregate, k: int) -> CorrProfile:
    """The time-averaged profile of the ``k``-th aggregated trajectory."""
    p = agg.profile
    return CorrProfile(
        r_values=p.r_values,
        mean=agg.trajectory_profiles[k],
        variance=np.zeros_like(p.mean),
        pair_count=p.pair_count,
        n_trajectories=1,
        n_time_samples=agg.n_time_samples,
        gamma=agg.gamma,
        L=p.L,
        protocol=agg.protocol,
    )
