"""Finite-size scaling of an observable ``G(gamma, L)`` near a crossing.

Model (orders ``m``, ``n``)::

    w     = (gamma - gamma_c) / gamma_c                  (signed)
    u(w)  = w + a_2 w^2 + ... + a_m w^m                  (a_1 = 1)
    phi   = u(w) L^(1/nu)
    G     = b_0 + b_1 phi + ... + b_n phi^n

so ``G(gamma_c, L) = b_0`` for every ``L``. At ``m = 2, n = 3`` this has
seven parameters. The optional irrelevant field adds

    phi_2 = c L^(-alpha),   G += phi_2 (1 + d_1 phi + ... + d_n phi^n)

(``alpha``, ``c``, ``d_1..d_n``: five more at ``n = 3``, twelve in total).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import ConfigurationError, DomainError, FitError, InsufficientDataError
from ._base import Z95, FitResult

N_STARTS = 10
NU_BOUNDS = (0.2, 20.0)
ALPHA_BOUNDS = (-10.0, 20.0)


@dataclass
class FssModel:
    gamma_c: float
    nu: float
    a: tuple = ()  # a_2 .. a_m
    b: tuple = (0.0, 1.0)  # b_0 .. b_n
    alpha: float | None = None
    c: float = 0.0
    d: tuple = ()  # d_1 .. d_n

    def __post_init__(self):
        if not self.nu > 0:
            raise DomainError(f"nu must be positive, got {self.nu}")
        if self.gamma_c == 0:
            raise DomainError("gamma_c must be nonzero")
        self.a = tuple(float(x) for x in self.a)
        self.b = tuple(float(x) for x in self.b)
        self.d = tuple(float(x) for x in self.d)
        if self.n < 1:
            raise DomainError("need n >= 1 (at least b_0 and b_1)")
        if self.alpha is not None and len(self.d) != self.n:
            raise DomainError(f"irrelevant field needs {self.n} cross coefficients, got {len(self.d)}")

    @property
    def m(self) -> int:
        return 1 + len(self.a)

    @property
    def n(self) -> int:
        return len(self.b) - 1

    @property
    def has_irrelevant(self) -> bool:
        return self.alpha is not None

    @property
    def a_full(self) -> tuple:
        """``(a_0, a_1, ..., a_m)`` with the structural ``a_0 = 0``, ``a_1 = 1``."""
        return (0.0, 1.0) + self.a

    def u(self, gamma) -> np.ndarray:
        w = (np.asarray(gamma, dtype=float) - self.gamma_c) / self.gamma_c
        return np.polynomial.polynomial.polyval(w, self.a_full)

    def phi(self, gamma, L) -> np.ndarray:
        return self.u(gamma) * np.asarray(L, dtype=float) ** (1.0 / self.nu)

    def predict(self, gamma, L) -> np.ndarray:
        ph = self.phi(gamma, L)
        G = np.polynomial.polynomial.polyval(ph, self.b)
        if self.has_irrelevant:
            phi2 = self.c * np.asarray(L, dtype=float) ** (-self.alpha)
            G = G + phi2 * np.polynomial.polynomial.polyval(ph, (1.0,) + self.d)
        return G

    # flat parameter vector for the solver
    def names(self) -> list[str]:
        out = ["gamma_c", "nu"] + [f"a{i}" for i in range(2, self.m + 1)]
        out += [f"b{i}" for i in range(self.n + 1)]
        if self.has_irrelevant:
            out += ["alpha", "c"] + [f"d{i}" for i in range(1, self.n + 1)]
        return out

    def to_vector(self) -> np.ndarray:
        v = [self.gamma_c, self.nu, *self.a, *self.b]
        if self.has_irrelevant:
            v += [self.alpha, self.c, *self.d]
        return np.asarray(v, dtype=float)

    @classmethod
    def from_vector(cls, theta, m: int, n: int, irrelevant: bool) -> "FssModel":
        theta = np.asarray(theta, dtype=float)
        k = 2
        a = theta[k : k + m - 1]
        k += m - 1
        b = theta[k : k + n + 1]
        k += n + 1
        if irrelevant:
            return cls(theta[0], theta[1], tuple(a), tuple(b), theta[k], theta[k + 1], tuple(theta[k + 2 : k + 2 + n]))
        return cls(theta[0], theta[1], tuple(a), tuple(b))

    @property
    def n_parameters(self) -> int:
        return len(self.names())

    def to_dict(self) -> dict:
        return dict(zip(self.names(), (float(x) for x in self.to_vector())))


def _as_table(data) -> np.ndarray:
    tab = np.asarray(data, dtype=float)
    if tab.ndim != 2 or tab.shape[1] != 4:
        raise ValueError("data must be rows of (L, gamma, mean, stderr)")
    if not np.all(np.isfinite(tab)):
        raise ValueError("data contains non-finite values")
    return tab


def _check_design(tab: np.ndarray) -> None:
    Ls = np.unique(tab[:, 0])
    if len(Ls) < 2:
        raise DomainError("degenerate design: all points share one system size")
    if len(Ls) < 3:
        raise InsufficientDataError(f"need at least 3 distinct L, got {len(Ls)}")
    if len(np.unique(tab[:, 1])) < 5:
        raise InsufficientDataError("need at least 5 distinct gamma values")
    if np.any(tab[:, 3] <= 0):
        raise ValueError("stderr must be positive")


def _linear_b(tab, gc, nu, a, n):
    """Best ``b_0..b_n`` for fixed scaling variable (weighted linear least squares)."""
    L, g, y, s = tab.T
    ph = FssModel(gc, nu, tuple(a), (0.0,) * (n + 1)).phi(g, L)
    V = np.vander(ph, n + 1, increasing=True) / s[:, None]
    coef, *_ = np.linalg.lstsq(V, y / s, rcond=None)
    return coef


def _solve(tab, theta0, m, n, irrelevant, lo_gc, hi_gc, max_nfev=20000):
    L, g, y, s = tab.T

    def resid(theta):
        with np.errstate(over="ignore", invalid="ignore"):
            r = (y - FssModel.from_vector(theta, m, n, irrelevant).predict(g, L)) / s
        return np.where(np.isfinite(r), r, 1e150)

    k = len(theta0)
    lo = np.full(k, -np.inf)
    hi = np.full(k, np.inf)
    lo[0], hi[0] = lo_gc, hi_gc
    lo[1], hi[1] = NU_BOUNDS
    if irrelevant:
        ia = 2 + (m - 1) + (n + 1)
        lo[ia], hi[ia] = ALPHA_BOUNDS
    pad = 1e-9 * np.maximum(np.abs(np.where(np.isfinite(lo), lo, 0.0)), 1.0)
    theta0 = np.clip(theta0, lo + pad, hi - pad)
    return least_squares(
        resid, theta0, bounds=(lo, hi), method="trf", x_scale="jac",
        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev,
    )


def _multistart(tab, m, n, irrelevant, n_starts, start=None):
    g = tab[:, 1]
    lo_gc, hi_gc = float(g.min()), float(g.max())
    starts = []
    if start is not None:
        starts.append(np.asarray(start, dtype=float))
    else:
        for gc0 in np.linspace(lo_gc, hi_gc, n_starts + 2)[1:-1]:
            b0 = _linear_b(tab, gc0, 1.0, [0.0] * (m - 1), n)
            th = [gc0, 1.0, *([0.0] * (m - 1)), *b0]
            if irrelevant:
                th += [2.0, 0.01 * float(np.mean(np.abs(tab[:, 2]))), *([0.0] * n)]
            starts.append(np.asarray(th))
    best = None
    for th in starts:
        try:
            sol = _solve(tab, th, m, n, irrelevant, lo_gc, hi_gc)
        except (ValueError, np.linalg.LinAlgError):
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    return best


def fss_fit(
    data,
    m: int = 2,
    n: int = 3,
    with_irrelevant: bool = False,
    n_starts: int = N_STARTS,
    n_bootstrap: int = 200,
    random_state: int | None = 0,
) -> tuple[FssModel, FitResult]:
    """Fit the scaling model to rows ``(L, gamma, mean, stderr)``.

    Minimizes ``sum ((G_obs - G_model) / stderr)^2`` by trust-region least
    squares from ``n_starts`` values of ``gamma_c`` spread over the scanned
    range. Intervals for ``gamma_c`` and ``nu`` are percentile intervals of
    a parametric bootstrap (fitted curve plus noise drawn from the error
    bars, refitted from the optimum); the remaining ones come from the Jacobian.
    """
    if m < 1 or n < 1:
        raise ConfigurationError(f"orders must satisfy m >= 1, n >= 1, got m={m}, n={n}")
    tab = _as_table(data)
    _check_design(tab)
    best = _multistart(tab, m, n, with_irrelevant, n_starts)
    if best is None:
        raise FitError("scaling fit failed from every start")
    model = FssModel.from_vector(best.x, m, n, with_irrelevant)
    names = model.names()

    J = best.jac
    try:
        se = np.sqrt(np.clip(np.diag(np.linalg.pinv(J.T @ J)), 0.0, None))
    except np.linalg.LinAlgError:
        se = np.full(len(names), np.inf)
    conf = {k: (v - Z95 * e, v + Z95 * e) for k, v, e in zip(names, best.x, se)}

    boot = np.empty((0, 2))
    if n_bootstrap:
        rng = np.random.default_rng(random_state)
        fitted = model.predict(tab[:, 1], tab[:, 0])
        reps = []
        for _ in range(n_bootstrap):
            t2 = tab.copy()
            t2[:, 2] = fitted + tab[:, 3] * rng.standard_normal(len(tab))
            sol = _multistart(t2, m, n, with_irrelevant, 1, start=best.x)
            if sol is not None and sol.status > 0:
                reps.append(sol.x[:2])
        boot = np.asarray(reps).reshape(-1, 2)
        if len(boot) >= 10:
            for k, col in (("gamma_c", 0), ("nu", 1)):
                conf[k] = tuple(np.percentile(boot[:, col], [2.5, 97.5]))

    chi2 = 2.0 * best.cost
    dof = len(tab) - len(names)
    grad = 2.0 * J.T @ best.fun
    result = FitResult(
        parameters=model.to_dict(),
        confidence=conf,
        residual_norm=math.sqrt(chi2),
        fit_window=(float(tab[:, 1].min()), float(tab[:, 1].max())),
        method="fss-irrelevant" if with_irrelevant else "fss",
        n_points=len(tab),
        converged=bool(best.status > 0),
        extra={
            "chi2": chi2,
            "dof": dof,
            "p_value": float(stats.chi2.sf(chi2, dof)) if dof > 0 else math.nan,
            "gradient_norm": float(np.max(np.abs(grad))),
            "n_parameters": len(names),
            "bootstrap": boot.tolist(),
            "crossing_value": model.b[0],
        },
    )
    if with_irrelevant and not model.alpha > 0:
        raise FitError(f"irrelevant-field inversion: fitted alpha = {model.alpha:.4g} <= 0", best=result)
    if best.status <= 0:
        raise FitError("scaling fit did not converge", best=result)
    return model, result


@dataclass
class Collapse:
    x: np.ndarray
    y: np.ndarray
    L: np.ndarray
    gamma: np.ndarray
    branch: np.ndarray  # -1 below gamma_c, +1 above; points at gamma_c appear once per branch
    informative: bool
    meta: dict = field(default_factory=dict)

    def rows(self):
        return zip(self.L, self.gamma, self.x, self.y, self.branch)


def collapse_transform(data, model: FssModel) -> Collapse:
    """Rescaled coordinates ``x = |gamma/gamma_c - 1| L^(1/nu)``, ``y = G``, split by branch."""
    tab = np.asarray(data, dtype=float)
    L, g, y = tab[:, 0], tab[:, 1], tab[:, 2]
    x = np.abs(g / model.gamma_c - 1.0) * L ** (1.0 / model.nu)
    br = np.sign(g - model.gamma_c).astype(int)
    at = br == 0
    # points exactly at the crossing belong to both branches
    L2 = np.concatenate([L, L[at]])
    g2 = np.concatenate([g, g[at]])
    x2 = np.concatenate([x, x[at]])
    y2 = np.concatenate([y, y[at]])
    b2 = np.concatenate([np.where(at, -1, br), np.ones(at.sum(), dtype=int)])
    return Collapse(x2, y2, L2, g2, b2, informative=len(np.unique(L)) > 1)


def collapse_score(col: Collapse, degree: int = 3) -> float:
    """Sum of squared deviations from a least-squares polynomial per branch.

    With a single system size every point lies on its own curve, so the
    score is meaningless; ``col.informative`` is False in that case.
    """
    total = 0.0
    for b in (-1, 1):
        sel = col.branch == b
        k = int(sel.sum())
        if k == 0:
            continue
        deg = min(degree, k - 1)
        coef = np.polynomial.polynomial.polyfit(col.x[sel], col.y[sel], deg)
        r = col.y[sel] - np.polynomial.polynomial.polyval(col.x[sel], coef)
        total += float(np.sum(r**2))
    return total


class FiniteSizeScaling(TransformerMixin, RegressorMixin, BaseEstimator):
    """Estimator wrapper of :func:`fss_fit`.

    ``X`` columns are ``(L, gamma)``; ``y`` the observable means; the
    standard errors go in ``fit(..., stderr=...)``. ``transform`` returns
    the collapse abscissa ``x = |gamma/gamma_c - 1| L^(1/nu)``.
    """

    def __init__(self, m=2, n=3, with_irrelevant=False, n_starts=N_STARTS, n_bootstrap=200, random_state=0):
        self.m = m
        self.n = n
        self.with_irrelevant = with_irrelevant
        self.n_starts = n_starts
        self.n_bootstrap = n_bootstrap
        self.random_state = random_state

    def fit(self, X, y, stderr=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        s = np.ones_like(y) if stderr is None else np.asarray(stderr, dtype=float)
        tab = np.column_stack([X[:, 0], X[:, 1], y, s])
        self.model_, self.result_ = fss_fit(
            tab, self.m, self.n, self.with_irrelevant, self.n_starts, self.n_bootstrap, self.random_state
        )
        self.gamma_c_ = self.model_.gamma_c
        self.nu_ = self.model_.nu
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = np.asarray(X, dtype=float)
        return self.model_.predict(X[:, 1], X[:, 0])

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = np.asarray(X, dtype=float)
        return (np.abs(X[:, 1] / self.gamma_c_ - 1.0) * X[:, 0] ** (1.0 / self.nu_))[:, None]
