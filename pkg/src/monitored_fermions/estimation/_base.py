"""Shared fit-result container and small numerical helpers."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..exceptions import InsufficientDataError

Z95 = stats.norm.ppf(0.975)


@dataclass
class FitResult:
    """Point estimates with 95% intervals.

    ``confidence[name]`` is ``(low, high)``; either end may be infinite
    (an unbounded correlation length, for instance).
    """

    parameters: dict
    confidence: dict
    residual_norm: float
    fit_window: tuple | None
    method: str
    n_points: int
    converged: bool = True
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.residual_norm = float(self.residual_norm)
        for k, v in self.parameters.items():
            lo, hi = self.confidence.get(k, (v, v))
            # keep the interval ordered and around the estimate even under rounding
            if np.isfinite(v):
                lo, hi = min(lo, v), max(hi, v)
            self.confidence[k] = (float(lo), float(hi))

    def __getitem__(self, name):
        return self.parameters[name]

    def to_dict(self) -> dict:
        def clean(x):
            x = float(x)
            return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")

        return {
            "method": self.method,
            "parameters": {k: clean(v) for k, v in self.parameters.items()},
            "confidence": {k: [clean(a), clean(b)] for k, (a, b) in self.confidence.items()},
            "window": None if self.fit_window is None else [clean(w) for w in self.fit_window],
            "residual_norm": clean(self.residual_norm),
            "n_points": int(self.n_points),
            "converged": bool(self.converged),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def t_quantile(dof: int) -> float:
    return float(stats.t.ppf(0.975, dof)) if dof > 0 else math.inf


def as_1d(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def require_points(n: int, minimum: int, what: str) -> None:
    if n < minimum:
        raise InsufficientDataError(f"{what}: need at least {minimum} points, got {n}")


def mean_interval(samples) -> tuple[float, tuple[float, float]]:
    """Sample mean with a Student-t 95% interval."""
    x = np.asarray(samples, dtype=float)
    m = float(x.mean())
    if x.size < 2:
        return m, (-math.inf, math.inf)
    half = t_quantile(x.size - 1) * x.std(ddof=1) / math.sqrt(x.size)
    return m, (m - half, m + half)
