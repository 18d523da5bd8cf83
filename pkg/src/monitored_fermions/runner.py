"""Experiment orchestration: configuration, seeding, parallel trajectories, outputs.

Output directory layout of one experiment::

    config.json              normalized configuration (guards resumption)
    records/traj_XXXXXX.npz  one file per finished trajectory
    checkpoints/             in-flight trajectory checkpoints
    profile.csv              r, chord_r, neg_C_mean, variance, stderr, pair_count
    trajectory_profiles.csv  per-trajectory time-averaged -C(r)
    trajectories.csv         per-trajectory time-averaged scalars
    summary.json             aggregated scalars
    manifest.json            config echo, seeds, failures, timing, version

A sweep writes one such directory per ``(L, gamma)`` cell under
``cells/`` plus ``scan.csv`` and ``sweep_manifest.json``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from .checkpoint import CheckpointPolicy
from .exceptions import (
    AggregationError,
    ConfigurationError,
    InsufficientDataError,
    NumericalDriftError,
)
from .lattice import Lattice
from .observables import Aggregate, BlockGeometry, ObservableSet, aggregate
from .pm import RATES, REPRESENTATIONS, PmConfig, run_pm_trajectory
from .qsd import MAX_DT, QsdConfig, run_qsd_trajectory
from .records import TrajectoryRecord

log = logging.getLogger(__name__)

PROTOCOLS = ("PM", "QSD")
MASK64 = (1 << 64) - 1
SWEEP_CELL_OFFSET = 1 << 40
DEFAULT_SAMPLES = {"PM": 4, "QSD": 33}


# --- seeding --------------------------------------------------------------

def _splitmix64(z: int) -> int:
    """SplitMix64 step: add the golden-ratio increment, then the bijective finalizer."""
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, trajectory_id: int) -> int:
    """64-bit per-trajectory seed, injective in ``trajectory_id`` for a fixed master seed.

    ``splitmix64(master ^ splitmix64(id))``: both steps are bijections of
    the 64-bit integers, so distinct ids give distinct seeds.
    """
    if trajectory_id < 0:
        raise ConfigurationError("trajectory ids must be non-negative")
    return _splitmix64((int(master_seed) & MASK64) ^ _splitmix64(int(trajectory_id) & MASK64))


# --- configuration --------------------------------------------------------

@dataclass
class ExperimentConfig:
    """One experiment, or a sweep when ``gamma`` or ``L`` is a list.

    ``L`` is the linear size: a ring of ``L`` sites in 1d, an ``L x L``
    torus in 2d. ``t_max`` defaults to ``L``. Sample times are
    ``n_samples`` equally spaced points in ``window`` (default
    ``[t_max/2, t_max]``) unless ``sample_times`` is given.
    """

    protocol: str = "QSD"
    dimension: int = 1
    L: int | list = 64
    gamma: float | list = 0.5
    n_trajectories: int = 10
    min_trajectories: int | None = None
    t_max: float | None = None
    n_samples: int | None = None
    sample_times: list | None = None
    window: list | None = None
    dt: float = 0.05
    rk4_substeps: int = 1
    rate: str = "particle"
    representation: str = "orbital"
    J: float = 1.0
    master_seed: int = 0
    output_dir: str = "run"
    workers: int = 1
    checkpoint: bool = True
    observables: dict = field(default_factory=lambda: {"entropy": True, "correlator": True, "blocks": True})

    def __post_init__(self):
        self.validate()

    # sweep axes
    @property
    def gammas(self) -> list[float]:
        return [float(g) for g in (self.gamma if isinstance(self.gamma, (list, tuple)) else [self.gamma])]

    @property
    def sizes(self) -> list[int]:
        return [int(x) for x in (self.L if isinstance(self.L, (list, tuple)) else [self.L])]

    @property
    def is_sweep(self) -> bool:
        return len(self.gammas) > 1 or len(self.sizes) > 1

    @property
    def required(self) -> int:
        if self.min_trajectories is not None:
            return int(self.min_trajectories)
        return max(1, math.ceil(self.n_trajectories / 2))

    def validate(self) -> None:
        err = ConfigurationError
        if self.protocol not in PROTOCOLS:
            raise err(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.dimension not in (1, 2):
            raise err(f"dimension must be 1 or 2, got {self.dimension}")
        for name, axis in (("gamma", self.gammas), ("L", self.sizes)):
            if not axis:
                raise err(f"{name} list is empty")
            if len(set(axis)) != len(axis):
                raise err(f"{name} values must be distinct")
        if any(not g > 0 for g in self.gammas):
            raise err("gamma values must be positive")
        if int(self.n_trajectories) != self.n_trajectories or self.n_trajectories < 1:
            raise err("n_trajectories must be a positive integer")
        if not 1 <= self.required <= self.n_trajectories:
            raise err("min_trajectories must lie in [1, n_trajectories]")
        if self.t_max is not None and not self.t_max > 0:
            raise err("t_max must be positive")
        if self.n_samples is not None and self.n_samples < 1:
            raise err("n_samples must be >= 1")
        if self.window is not None and (len(self.window) != 2 or not self.window[0] <= self.window[1]):
            raise err("window must be [low, high] with low <= high")
        if self.protocol == "QSD" and not 0 < self.dt <= MAX_DT:
            raise err(f"dt must lie in (0, {MAX_DT}]")
        if self.rate not in RATES:
            raise err(f"rate must be one of {RATES}")
        if self.representation not in REPRESENTATIONS:
            raise err(f"representation must be one of {REPRESENTATIONS}")
        if self.workers < 1:
            raise err("workers must be >= 1")
        unknown = set(self.observables) - {"entropy", "correlator", "blocks"}
        if unknown:
            raise err(f"unknown observables {sorted(unknown)}")
        for L in self.sizes:
            # lattice, block and protocol preconditions for every cell
            lat = self.lattice(L)
            if lat.n_sites % 2:
                raise err(f"half filling needs an even site count, got {lat.n_sites}")
            if self.observables.get("blocks", True) and L % 4:
                raise err(f"block observables need L divisible by 4, got {L}")
            self.protocol_config(self.gammas[0], lat)

    def lattice(self, L: int) -> Lattice:
        return Lattice.ring(L) if self.dimension == 1 else Lattice.torus(L)

    def t_max_for(self, L: int) -> float:
        return float(self.t_max) if self.t_max is not None else float(L)

    def sample_schedule(self, L: int) -> list[float]:
        t_max = self.t_max_for(L)
        if self.sample_times is not None:
            return sorted(float(t) for t in self.sample_times)
        lo, hi = self.window if self.window is not None else (t_max / 2.0, t_max)
        n = self.n_samples or DEFAULT_SAMPLES[self.protocol]
        return np.linspace(lo, hi, n).tolist() if n > 1 else [float(hi)]

    def protocol_config(self, gamma: float, lat: Lattice):
        L = lat.extents[0]
        try:
            if self.protocol == "PM":
                return PmConfig(
                    gamma=gamma, t_max=self.t_max_for(L), sample_times=self.sample_schedule(L),
                    J=self.J, rate=self.rate, representation=self.representation,
                )
            return QsdConfig(
                gamma=gamma, t_max=self.t_max_for(L), dt=self.dt, J=self.J,
                sample_times=self.sample_schedule(L), rk4_substeps=self.rk4_substeps,
            )
        except ConfigurationError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(str(exc)) from exc

    def observable_set(self, lat: Lattice) -> ObservableSet:
        obs = self.observables
        blocks = BlockGeometry.standard(lat) if obs.get("blocks", True) else None
        return ObservableSet(entropy=obs.get("entropy", True), correlator=obs.get("correlator", True), blocks=blocks)

    def cell(self, L: int, gamma: float, output_dir) -> "ExperimentConfig":
        return dataclasses.replace(self, L=int(L), gamma=float(gamma), output_dir=str(output_dir))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("configuration must be a mapping")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown configuration keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        """Read YAML, or JSON (a subset of YAML; ``.json`` files use the json module)."""
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot parse config {path}: {exc}") from exc
        return cls.from_dict(data or {})


# --- trajectory jobs ------------------------------------------------------

@dataclass(frozen=True)
class Job:
    cell: int
    trajectory_id: int
    seed: int
    config: dict  # single-cell ExperimentConfig as a dict (picklable, no numpy)
    record_path: str
    checkpoint_path: str | None
    halt_after: int | None = None


def run_job(job: Job) -> TrajectoryRecord:
    """Run (or resume) one trajectory; numerical failures become failed records."""
    cfg = ExperimentConfig.from_dict(job.config)
    L = cfg.sizes[0]
    lat = cfg.lattice(L)
    pcfg = cfg.protocol_config(cfg.gammas[0], lat)
    policy = None
    if job.checkpoint_path is not None:
        policy = CheckpointPolicy(job.checkpoint_path, CheckpointPolicy.cadence(pcfg.t_max), job.halt_after)
    run = run_pm_trajectory if cfg.protocol == "PM" else run_qsd_trajectory
    resumed = policy is not None and policy.exists()
    try:
        with threadpool_limits(limits=1):
            rec = run(pcfg, lat, job.seed, observables=cfg.observable_set(lat), trajectory_id=job.trajectory_id,
                      checkpoint=policy)
    except (NumericalDriftError, np.linalg.LinAlgError, FloatingPointError) as exc:
        rec = TrajectoryRecord(job.trajectory_id, job.seed, cfg.protocol, cfg.gammas[0], lat.extents, pcfg.t_max)
        rec.fail(f"{type(exc).__name__}: {exc}")
    rec.resumed = rec.resumed or resumed
    rec.save(job.record_path)
    if policy is not None:
        policy.clear()
    return rec


def _execute(jobs: list[Job], workers: int) -> dict[tuple[int, int], TrajectoryRecord]:
    """Run jobs, reusing finished record files. Keys are ``(cell, trajectory_id)``."""
    out = {}
    todo = []
    for j in jobs:
        p = Path(j.record_path)
        if p.exists():
            rec = TrajectoryRecord.load(p)
            rec.resumed = True
            out[(j.cell, j.trajectory_id)] = rec
        else:
            todo.append(j)
    if workers == 1 or len(todo) <= 1:
        for j in todo:
            out[(j.cell, j.trajectory_id)] = run_job(j)
        return out
    # dynamic dispatch: each idle worker takes the next trajectory
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futures = {ex.submit(run_job, j): j for j in todo}
        for fut in as_completed(futures):
            j = futures[fut]
            out[(j.cell, j.trajectory_id)] = fut.result()
    return out


# --- outputs --------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        return rd.fieldnames, list(rd)


def _code_version() -> str:
    from . import __version__

    return __version__


def _write_outputs(out: Path, agg: Aggregate, records: list[TrajectoryRecord]) -> dict:
    prof = agg.profile
    if prof is not None:
        write_csv(
            out / "profile.csv",
            ["r", "chord_r", "neg_C_mean", "variance", "stderr", "pair_count"],
            zip(prof.r_values, prof.chord() if len(agg.extents) == 1 else prof.r_values,
                prof.neg_mean, prof.variance, prof.stderr, prof.pair_count),
        )
        rows = []
        for k, tid in enumerate(agg.trajectory_ids):
            for r, c in zip(prof.r_values, agg.trajectory_profiles[k]):
                rows.append((tid, r, -c))
        write_csv(out / "trajectory_profiles.csv", ["trajectory_id", "r", "neg_C"], rows)
    by_id = {r.trajectory_id: r for r in records}
    v = agg.trajectory_values
    write_csv(
        out / "trajectories.csv",
        ["trajectory_id", "seed", "n_events", "entropy", "G_AB", "I2"],
        ((tid, by_id[tid].seed, by_id[tid].n_events, v["entropy"][k], v["gab"][k], v["i2"][k])
         for k, tid in enumerate(agg.trajectory_ids)),
    )
    summary = {
        "protocol": agg.protocol,
        "gamma": agg.gamma,
        "extents": list(agg.extents),
        "n_traj": agg.n_trajectories,
        "n_time_samples": agg.n_time_samples,
        "window": list(agg.meta["window"]),
    }
    for name, st in (("entropy", agg.entropy), ("G_AB", agg.gab), ("I2", agg.i2)):
        summary[f"{name}_mean"] = float(st.mean)
        summary[f"{name}_stderr"] = float(st.stderr)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


@dataclass
class ExperimentResult:
    aggregate: Aggregate | None
    records: list
    summary: dict
    manifest: dict
    output_dir: Path


def _prepare_dir(cfg: ExperimentConfig, out: Path) -> None:
    (out / "records").mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    echo = cfg.to_dict()
    echo.pop("workers")  # parallelism does not change results
    echo.pop("output_dir")
    text = json.dumps(echo, indent=2, sort_keys=True) + "\n"
    path = out / "config.json"
    if path.exists() and path.read_text() != text:
        raise ConfigurationError(f"{out} holds a different experiment; choose another output_dir")
    path.write_text(text)


def _cell_jobs(cfg: ExperimentConfig, out: Path, cell: int, master: int, halt_after) -> list[Job]:
    d = cfg.to_dict()
    return [
        Job(
            cell=cell,
            trajectory_id=k,
            seed=derive_seed(master, k),
            config=d,
            record_path=str(out / "records" / f"traj_{k:06d}.npz"),
            checkpoint_path=str(out / "checkpoints" / f"traj_{k:06d}.ckpt") if cfg.checkpoint else None,
            halt_after=halt_after,
        )
        for k in range(cfg.n_trajectories)
    ]


def _finish_cell(cfg: ExperimentConfig, out: Path, records: list[TrajectoryRecord], master: int,
                 wall: float) -> ExperimentResult:
    records = sorted(records, key=lambda r: r.trajectory_id)
    done = [r for r in records if r.completed]
    failed = [{"trajectory_id": r.trajectory_id, "seed": r.seed, "reason": r.reason} for r in records if not r.completed]
    manifest = {
        "config": cfg.to_dict(),
        "master_seed": master,
        "seeds": {str(r.trajectory_id): r.seed for r in records},
        "completed": len(done),
        "failed": failed,
        "resumed": any(r.resumed for r in records),
        "resumed_trajectories": [r.trajectory_id for r in records if r.resumed],
        "wall_time_s": wall,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "code_version": _code_version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if len(done) < cfg.required:
        raise InsufficientDataError(f"{out}: {len(done)} completed trajectories, need {cfg.required}")
    try:
        agg = aggregate(done, tuple(cfg.window) if cfg.window is not None else None)
    except AggregationError as exc:
        raise InsufficientDataError(str(exc)) from exc
    summary = _write_outputs(out, agg, done)
    return ExperimentResult(agg, records, summary, manifest, out)


def run_experiment(cfg: ExperimentConfig, *, halt_after_checkpoints: int | None = None) -> ExperimentResult:
    """Run ``cfg.n_trajectories`` trajectories of one ``(L, gamma)`` point and write outputs.

    Re-running with the same ``output_dir`` resumes: finished trajectories
    are loaded from their records, unfinished ones restart from their
    latest checkpoint. ``halt_after_checkpoints`` aborts every trajectory
    after that many checkpoints (crash emulation for tests).
    """
    if cfg.is_sweep:
        raise ConfigurationError("gamma/L lists describe a sweep; use sweep()")
    out = Path(cfg.output_dir)
    _prepare_dir(cfg, out)
    t0 = time.perf_counter()
    jobs = _cell_jobs(cfg, out, 0, cfg.master_seed, halt_after_checkpoints)
    recs = _execute(jobs, cfg.workers)
    return _finish_cell(cfg, out, list(recs.values()), cfg.master_seed, time.perf_counter() - t0)


SCAN_COLUMNS = ["L", "gamma", "G_AB_mean", "G_AB_stderr", "I2_mean", "I2_stderr", "S_mean", "S_stderr", "n_traj"]


@dataclass
class SweepResult:
    table: list[dict]
    cells: dict
    failed_cells: list
    output_dir: Path


def sweep(cfg: ExperimentConfig, *, halt_after_checkpoints: int | None = None) -> SweepResult:
    """Run every ``(L, gamma)`` cell and write the scan table ``scan.csv``.

    All trajectories of all cells share one worker pool. Cell ``k`` (in
    ``L``-major, ``gamma``-minor order) uses the master seed
    ``derive_seed(master_seed, 2**40 + k)``. Cells with too few completed
    trajectories are left out of the table and listed in the manifest.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    cells = []
    jobs = []
    for L in cfg.sizes:
        for g in cfg.gammas:
            k = len(cells)
            cdir = out / "cells" / f"L{L}_gamma{g:g}"
            ccfg = cfg.cell(L, g, cdir)
            master = derive_seed(cfg.master_seed, SWEEP_CELL_OFFSET + k)
            _prepare_dir(ccfg, cdir)
            cells.append((k, L, g, ccfg, master))
            jobs.extend(_cell_jobs(ccfg, cdir, k, master, halt_after_checkpoints))
    recs = _execute(jobs, cfg.workers)
    wall = time.perf_counter() - t0

    table, results, failed = [], {}, []
    for k, L, g, ccfg, master in cells:
        cell_recs = [r for (c, _), r in recs.items() if c == k]
        try:
            res = _finish_cell(ccfg, Path(ccfg.output_dir), cell_recs, master, wall)
        except InsufficientDataError as exc:
            failed.append({"L": L, "gamma": g, "reason": str(exc)})
            continue
        s = res.summary
        results[(L, g)] = res
        table.append({
            "L": L, "gamma": g,
            "G_AB_mean": s["G_AB_mean"], "G_AB_stderr": s["G_AB_stderr"],
            "I2_mean": s["I2_mean"], "I2_stderr": s["I2_stderr"],
            "S_mean": s["entropy_mean"], "S_stderr": s["entropy_stderr"],
            "n_traj": s["n_traj"],
        })
    write_csv(out / "scan.csv", SCAN_COLUMNS, ([row[c] for c in SCAN_COLUMNS] for row in table))
    manifest = {
        "config": cfg.to_dict(),
        "cells": [{"L": L, "gamma": g, "master_seed": m, "dir": str(c.output_dir)} for _, L, g, c, m in cells],
        "failed_cells": failed,
        "wall_time_s": wall,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "code_version": _code_version(),
    }
    (out / "sweep_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if not table:
        raise InsufficientDataError("no sweep cell completed enough trajectories")
    return SweepResult(table, results, failed, out)


def read_scan(path, observable: str = "G_AB") -> np.ndarray:
    """Scan table as rows ``(L, gamma, mean, stderr)`` of one observable, ready for the scaling fit."""
    header, rows = read_csv(path)
    if f"{observable}_mean" not in (header or []):
        raise ConfigurationError(f"{path} has no column {observable}_mean")
    return np.array(
        [[float(r["L"]), float(r["gamma"]), float(r[f"{observable}_mean"]), float(r[f"{observable}_stderr"])] for r in rows]
    ).reshape(-1, 4)
