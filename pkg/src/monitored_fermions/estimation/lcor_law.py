"""Divergence laws of the correlation length as a function of the monitoring rate.

NLSM:  l_cor = A / (gamma - gamma_c) * exp(a / (gamma - gamma_c))
BKT:   l_cor = A * exp(b / sqrt(gamma - gamma_c))

Both are fitted by weighted nonlinear least squares on ``l_cor`` (weights
``1/variance``) with ``0 <= gamma_c < min(gamma)``. The amplitude is
parameterized as ``ln A`` to keep it positive; its interval is reported
for ``A``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import ConfigurationError, FitError
from ._base import Z95, FitResult, as_1d, require_points

LAWS = ("NLSM", "BKT")
N_STARTS = 10
MAX_NFEV = 2000
# keep exp() finite while the solver explores
EXP_CAP = 700.0


def _shape(law, gamma, gc):
    d = gamma - gc
    if law == "NLSM":
        return 1.0 / d, -np.log(d)
    return 1.0 / np.sqrt(d), np.zeros_like(d)


def law_value(law: str, gamma, gamma_c: float, log_amplitude: float, rate: float) -> np.ndarray:
    """Evaluate the law at ``gamma`` (each ``gamma > gamma_c``)."""
    g = np.asarray(gamma, dtype=float)
    s, extra = _shape(law, g, gamma_c)
    return np.exp(np.minimum(log_amplitude + extra + rate * s, EXP_CAP))


def _initial(law, gamma, lcor, weight_sqrt, gc):
    # linear in (ln A, rate) once gamma_c is fixed: ln l = ln A + extra + rate * s
    s, extra = _shape(law, gamma, gc)
    z = np.log(lcor) - extra
    w = weight_sqrt * lcor  # first-order propagation of the l_cor weights to ln l
    A = np.column_stack([np.ones_like(s), s]) * w[:, None]
    coef, *_ = np.linalg.lstsq(A, z * w, rcond=None)
    return coef


def fit_lcor_law(points, law: str = "NLSM", n_starts: int = N_STARTS, max_nfev: int = MAX_NFEV) -> FitResult:
    """Weighted fit of ``[(gamma, l_cor, variance), ...]`` to the NLSM or BKT law.

    Multi-start over a ``gamma_c`` grid in ``[0, min(gamma))``; the best
    converged start wins. Intervals are ``1.96`` standard errors from the
    Jacobian at the optimum (variances taken as absolute).
    """
    if law not in LAWS:
        raise ConfigurationError(f"law must be one of {LAWS}, got {law!r}")
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be a sequence of (gamma, l_cor, variance)")
    gamma, lcor, var = (as_1d(pts[:, k], n) for k, n in enumerate(("gamma", "l_cor", "variance")))
    require_points(len(np.unique(gamma)), 4, "l_cor law fit")
    if np.any(var <= 0):
        raise ValueError("variances must be positive")
    if np.any(lcor <= 0) or np.any(gamma <= 0):
        raise ValueError("gamma and l_cor must be positive")
    # weights relative to the largest one: same minimizer, and equal variances
    # give exactly the unweighted problem
    w_abs = 1.0 / np.sqrt(var)
    scale = float(w_abs.max())
    ws = w_abs / scale
    g_hi = float(gamma.min()) * (1.0 - 1e-6)

    def resid(theta):
        gc, la, rate = theta
        return (lcor - law_value(law, gamma, gc, la, rate)) * ws

    best = None
    for gc0 in np.linspace(0.0, 0.9 * gamma.min(), n_starts):
        try:
            la0, rate0 = _initial(law, gamma, lcor, ws, gc0)
            sol = least_squares(
                resid,
                x0=[gc0, la0, rate0],
                bounds=([0.0, -np.inf, -np.inf], [g_hi, np.inf, np.inf]),
                method="trf",
                x_scale="jac",
                max_nfev=max_nfev,
                xtol=1e-12,
                ftol=1e-12,
                gtol=1e-12,
            )
        except (ValueError, np.linalg.LinAlgError, FloatingPointError):
            continue
        if not np.all(np.isfinite(sol.fun)):
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None:
        raise FitError(f"{law} fit failed from every start", best=None)

    J = best.jac
    try:
        cov = np.linalg.inv(J.T @ J) / scale**2
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        se = np.full(3, np.inf)
    gc, la, rate = best.x
    rate_name = "a" if law == "NLSM" else "b"
    result = FitResult(
        parameters={"gamma_c": float(gc), "A": math.exp(la), rate_name: float(rate)},
        confidence={
            "gamma_c": (gc - Z95 * se[0], gc + Z95 * se[0]),
            "A": (math.exp(la - Z95 * se[1]), math.exp(la + Z95 * se[1])),
            rate_name: (rate - Z95 * se[2], rate + Z95 * se[2]),
        },
        residual_norm=float(np.sqrt(2 * best.cost)) * scale,
        fit_window=(float(gamma.min()), float(gamma.max())),
        method=law,
        n_points=len(gamma),
        converged=bool(best.status > 0),
        extra={"chi2": float(2 * best.cost) * scale**2, "dof": len(gamma) - 3, "at_lower_bound": bool(gc <= 0.0)},
    )
    if best.status <= 0:
        raise FitError(f"{law} fit did not converge in {max_nfev} evaluations", best=result)
    return result


class CorrelationLengthLaw(RegressorMixin, BaseEstimator):
    """Estimator form of :func:`fit_lcor_law`.

    ``X`` is the monitoring rate (one column), ``y`` the correlation length;
    ``sample_weight`` is the inverse variance.
    """

    def __init__(self, law="NLSM", n_starts=N_STARTS, max_nfev=MAX_NFEV):
        self.law = law
        self.n_starts = n_starts
        self.max_nfev = max_nfev

    def fit(self, X, y, sample_weight=None):
        g = np.asarray(X, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float)
        w = np.ones_like(y) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        self.result_ = fit_lcor_law(np.column_stack([g, y, 1.0 / w]), self.law, self.n_starts, self.max_nfev)
        self.gamma_c_ = self.result_["gamma_c"]
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        p = self.result_.parameters
        rate = p["a"] if self.law == "NLSM" else p["b"]
        return law_value(self.law, np.asarray(X, dtype=float).reshape(-1), p["gamma_c"], math.log(p["A"]), rate)
