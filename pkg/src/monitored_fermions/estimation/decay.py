"""Decay fits of the density correlator: exponential tail and power law.

Both fits are ordinary least squares on ``ln(-C)`` against the (chord)
distance or its logarithm. With ``rescale=True`` the distance is the chord
length ``r~ = (L/pi) sin(pi r / L)`` and the exponential model is
``-C ~ exp(-pi r~ / l_cor)``; without rescaling it is ``exp(-r / l_cor)``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import ConfigurationError, InsufficientDataError, WindowError
from ..lattice import chord_distance
from ..observables import Aggregate, CorrProfile
from ._base import FitResult, mean_interval, require_points, t_quantile

MIN_POINTS = 4
BOUNDARY_FRACTION = 0.4


def _windowed(r, y, window):
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    r_min, r_max = (float(w) for w in window)
    if not r_min < r_max:
        raise WindowError(f"empty window [{r_min}, {r_max}]")
    if r_min < r.min() - 1e-12 or r_max > r.max() + 1e-12:
        raise WindowError(f"window [{r_min}, {r_max}] outside data range [{r.min()}, {r.max()}]")
    sel = (r >= r_min) & (r <= r_max)
    require_points(int(sel.sum()), MIN_POINTS, "decay fit")
    if not np.all(y[sel] > 0):
        raise WindowError(f"-C(r) must be strictly positive inside [{r_min}, {r_max}]")
    return r[sel], y[sel]


def _abscissa(r, L, rescale):
    if not rescale:
        return r
    if not L:
        raise ConfigurationError("chord rescaling needs the system size L")
    return chord_distance(L, r)


def _linear(x, z):
    lr = stats.linregress(x, z)
    resid = z - (lr.intercept + lr.slope * x)
    return lr, float(np.sqrt(np.sum(resid**2)))


def exponential_from_arrays(r, neg_c, L=None, window=None, rescale=True) -> FitResult:
    if window is None:
        window = select_window(r, neg_c, L, rescale=rescale)
    rw, yw = _windowed(r, neg_c, window)
    x = _abscissa(rw, L, rescale)
    z = np.log(yw)
    lr, rn = _linear(x, z)
    # slopes below the rounding resolution of log(-C) over the window count as flat
    floor = 16 * np.finfo(float).eps * max(1.0, float(np.abs(z).max())) / float(np.ptp(x))
    slope = 0.0 if abs(lr.slope) <= floor else float(lr.slope)
    k = math.pi if rescale else 1.0
    half = t_quantile(len(x) - 2) * lr.stderr
    s_lo, s_hi = slope - half, slope + half

    def length(s):
        return k / -s if s < 0 else math.inf

    unbounded = not slope < 0
    l_cor = length(slope)
    ci = (length(s_lo), length(s_hi)) if not unbounded else (length(s_lo), math.inf)
    return FitResult(
        parameters={"l_cor": l_cor, "slope": slope, "intercept": float(lr.intercept)},
        confidence={
            "l_cor": ci,
            "slope": (s_lo, s_hi),
            "intercept": (
                lr.intercept - t_quantile(len(x) - 2) * lr.intercept_stderr,
                lr.intercept + t_quantile(len(x) - 2) * lr.intercept_stderr,
            ),
        },
        residual_norm=rn,
        fit_window=tuple(float(w) for w in window),
        method="exponential-chord" if rescale else "exponential",
        n_points=len(x),
        extra={"unbounded": unbounded},
    )


def power_law_from_arrays(r, neg_c, L=None, window=None, rescale=True) -> FitResult:
    if window is None:
        window = (1.0, BOUNDARY_FRACTION * (L or np.max(r)))
    rw, yw = _windowed(r, neg_c, window)
    x = _abscissa(rw, L, rescale)
    if np.any(x <= 0):
        raise WindowError("power-law fit needs positive distances")
    lr, rn = _linear(np.log(x), np.log(yw))
    q = t_quantile(len(x) - 2)
    p = -lr.slope
    p_ci = (p - q * lr.stderr, p + q * lr.stderr)
    # -C = (r / l0)^(-p)  =>  ln(-C) = p ln l0 - p ln r
    l0 = math.exp(lr.intercept / p) if p != 0 else math.nan
    return FitResult(
        parameters={"p": p, "l0": l0, "intercept": float(lr.intercept)},
        confidence={"p": p_ci},
        residual_norm=rn,
        fit_window=tuple(float(w) for w in window),
        method="power-law-chord" if rescale else "power-law",
        n_points=len(x),
    )


def fit_exponential(profile: CorrProfile, window=None, rescale: bool = True) -> FitResult:
    """Correlation length from the exponential tail of ``-C(r)``.

    ``window=None`` picks it with :func:`select_window`.
    """
    return exponential_from_arrays(profile.r_values, profile.neg_mean, profile.L, window, rescale)


def fit_power_law(profile: CorrProfile, window=None, rescale: bool = True) -> FitResult:
    """Exponent ``p`` and scale ``l0`` of ``-C = (r~/l0)^(-p)``."""
    return power_law_from_arrays(profile.r_values, profile.neg_mean, profile.L, window, rescale)


def fit_exponential_trajectories(agg: Aggregate, window, rescale: bool = True) -> FitResult:
    """One exponential fit per trajectory; reports the mean ``l_cor`` and its 95% interval.

    Unbounded per-trajectory lengths make the mean unbounded too.
    """
    r = agg.profile.r_values
    L = agg.profile.L
    fits = [
        exponential_from_arrays(r, -agg.trajectory_profiles[k], L, window, rescale)
        for k in range(agg.trajectory_profiles.shape[0])
    ]
    ls = np.array([f["l_cor"] for f in fits])
    if not np.all(np.isfinite(ls)):
        m, ci = math.inf, (math.inf, math.inf)
    else:
        m, ci = mean_interval(ls)
    return FitResult(
        parameters={"l_cor": m},
        confidence={"l_cor": ci},
        residual_norm=float(np.sqrt(np.sum([f.residual_norm**2 for f in fits]))),
        fit_window=tuple(float(w) for w in window),
        method="exponential-per-trajectory",
        n_points=fits[0].n_points if fits else 0,
        extra={"samples": ls.tolist(), "std": float(ls.std(ddof=1)) if len(ls) > 1 else math.nan},
    )


def select_window(r, neg_c, L=None, rescale: bool = True, r_max_fraction: float = BOUNDARY_FRACTION,
                  crossover_factor: float = 1.25) -> tuple[float, float]:
    """Fit window for the exponential tail.

    The upper edge is ``r_max_fraction * L`` (boundary effects). The lower
    edge is the crossover out of the power-law regime: the local
    logarithmic derivative ``k(r) = -d ln(-C) / d r~`` falls like ``p / r~``
    for a power law and is flat for an exponential; the window starts where
    ``k`` first comes within ``crossover_factor`` of its median over the
    outer half of the range. Falls back to the smallest distances when
    fewer than four points would remain.
    """
    r = np.asarray(r, dtype=float)
    y = np.asarray(neg_c, dtype=float)
    L = L or int(round(2 * r.max()))
    r_max = r_max_fraction * L
    ok = (r <= r_max) & (y > 0)
    rr, yy = r[ok], y[ok]
    if len(rr) < MIN_POINTS:
        raise InsufficientDataError(f"only {len(rr)} usable distances below {r_max}")
    x = chord_distance(L, rr) if rescale else rr
    k = -np.diff(np.log(yy)) / np.diff(x)
    mid = 0.5 * (rr[1:] + rr[:-1])
    tail = np.median(k[mid >= 0.5 * r_max]) if np.any(mid >= 0.5 * r_max) else np.median(k)
    r_min = rr[0]
    if tail > 0:
        hit = np.flatnonzero(k <= crossover_factor * tail)
        if hit.size:
            r_min = rr[hit[0]]
    if np.sum((rr >= r_min) & (rr <= r_max)) < MIN_POINTS:
        r_min = rr[max(0, len(rr) - MIN_POINTS)]
    return float(r_min), float(rr[-1])


class _DecayEstimator(RegressorMixin, BaseEstimator):
    def __init__(self, window=None, rescale=True, L=None):
        self.window = window
        self.rescale = rescale
        self.L = L

    def _x(self, X):
        r = np.asarray(X, dtype=float).reshape(-1)
        return chord_distance(self.L, r) if self.rescale else r


class ExponentialDecay(_DecayEstimator):
    """``-C(r) = A exp(-k r~ / l_cor)`` with ``k = pi`` under chord rescaling.

    ``X`` holds distances (one column), ``y`` the positive correlator ``-C``.
    """

    def fit(self, X, y):
        r = np.asarray(X, dtype=float).reshape(-1)
        self.result_ = exponential_from_arrays(r, y, self.L, self.window, self.rescale)
        self.l_cor_ = self.result_["l_cor"]
        self.coef_ = np.array([self.result_["slope"]])
        self.intercept_ = self.result_["intercept"]
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return np.exp(self.intercept_ + self.coef_[0] * self._x(X))


class PowerLawDecay(_DecayEstimator):
    """``-C(r) = (r~ / l0)^(-p)``."""

    def fit(self, X, y):
        r = np.asarray(X, dtype=float).reshape(-1)
        self.result_ = power_law_from_arrays(r, y, self.L, self.window, self.rescale)
        self.exponent_ = self.result_["p"]
        self.scale_ = self.result_["l0"]
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return np.exp(self.result_["intercept"] - self.exponent_ * np.log(self._x(X)))
