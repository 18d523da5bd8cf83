"""Per-trajectory output container."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COMPLETED = "completed"
FAILED = "failed"


@dataclass
class TrajectoryRecord:
    """Observables of one quantum trajectory at its scheduled sample times.

    ``profile`` rows hold the distance-binned correlator ``C(r) <= 0`` for
    each snapshot; ``gab``/``i2`` are NaN when no block geometry was set.
    ``states`` (site-basis correlation matrices) is only filled on request
    and never persisted.
    """

    trajectory_id: int
    seed: int
    protocol: str
    gamma: float
    extents: tuple[int, ...]
    t_max: float
    times: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    profile: list = field(default_factory=list)
    gab: list = field(default_factory=list)
    i2: list = field(default_factory=list)
    n_events: int = 0
    status: str = COMPLETED
    reason: str = ""
    resumed: bool = False
    states: list = field(default_factory=list, repr=False)

    def add(self, time: float, obs: dict, D=None) -> None:
        self.times.append(float(time))
        self.entropy.append(obs.get("entropy", np.nan))
        self.profile.append(obs.get("profile", np.empty(0)))
        self.gab.append(obs.get("gab", np.nan))
        self.i2.append(obs.get("i2", np.nan))
        if D is not None:
            self.states.append(D)

    @property
    def completed(self) -> bool:
        return self.status == COMPLETED

    def fail(self, reason: str) -> None:
        self.status = FAILED
        self.reason = reason

    def metadata(self) -> tuple:
        return (self.protocol, float(self.gamma), tuple(self.extents), float(self.t_max))

    def arrays(self) -> dict[str, np.ndarray]:
        nb = max((len(p) for p in self.profile), default=0)
        prof = np.full((len(self.profile), nb), np.nan)
        for k, p in enumerate(self.profile):
            prof[k, : len(p)] = p
        return {
            "times": np.asarray(self.times, dtype=float),
            "entropy": np.asarray(self.entropy, dtype=float),
            "profile": prof,
            "gab": np.asarray(self.gab, dtype=float),
            "i2": np.asarray(self.i2, dtype=float),
        }

    # snapshot lists travel inside checkpoint headers as JSON
    def snapshot_payload(self) -> dict:
        return {
            "times": list(self.times),
            "entropy": [float(x) for x in self.entropy],
            "profile": [np.asarray(p, dtype=float).tolist() for p in self.profile],
            "gab": [float(x) for x in self.gab],
            "i2": [float(x) for x in self.i2],
            "n_events": int(self.n_events),
        }

    def restore_snapshots(self, payload: dict) -> None:
        self.times = [float(t) for t in payload["times"]]
        self.entropy = [float(x) for x in payload["entropy"]]
        self.profile = [np.asarray(p, dtype=float) for p in payload["profile"]]
        self.gab = [float(x) for x in payload["gab"]]
        self.i2 = [float(x) for x in payload["i2"]]
        self.n_events = int(payload["n_events"])
        self.resumed = True

    def save(self, path) -> None:
        arr = self.arrays()
        np.savez(
            path,
            trajectory_id=self.trajectory_id,
            seed=np.uint64(self.seed),
            protocol=self.protocol,
            gamma=self.gamma,
            extents=np.asarray(self.extents),
            t_max=self.t_max,
            n_events=self.n_events,
            status=self.status,
            reason=self.reason,
            resumed=self.resumed,
            **arr,
        )

    @classmethod
    def load(cls, path) -> "TrajectoryRecord":
        with np.load(path, allow_pickle=False) as z:
            rec = cls(
                trajectory_id=int(z["trajectory_id"]),
                seed=int(z["seed"]),
                protocol=str(z["protocol"]),
                gamma=float(z["gamma"]),
                extents=tuple(int(e) for e in z["extents"]),
                t_max=float(z["t_max"]),
                n_events=int(z["n_events"]),
                status=str(z["status"]),
                reason=str(z["reason"]),
                resumed=bool(z["resumed"]),
            )
            rec.times = list(z["times"])
            rec.entropy = list(z["entropy"])
            rec.profile = [row for row in z["profile"]]
            rec.gab = list(z["gab"])
            rec.i2 = list(z["i2"])
        return rec
