"""Contact angle of the planar minimizing cone from the fractional Young law.

``M(theta, s) = 2 int_0^theta int_0^inf r (r^2 + 2 r cos t + 1)^{-(2+s)/2} dr dt``
and the angle solves ``(sin theta)^s M(theta, s) / M(pi/2, s) = 1 + sigma``.

The inner integral is folded onto ``[0, 1]`` with ``r -> 1/r``:
``int_0^1 (r + r^{s-1}) (r^2 + 2 r cos t + 1)^{-(2+s)/2} dr``,
so no truncation of the half-line is needed and the ``r^{s-1}`` endpoint
behaviour is handled by an algebraic-weight rule.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate
from sklearn.base import BaseEstimator

from ._validation import NoBracketError, NotConvergedWarning, check_order, check_scalar, check_sigma

SCAN_STEPS = 64


@dataclass(frozen=True)
class MValue:
    value: float
    error: float


def _inner(t, s, tol):
    """``int_0^inf r (r^2 + 2r cos t + 1)^{-(2+s)/2} dr`` and its error."""
    c = math.cos(t)
    e = -(2.0 + s) / 2.0

    def base(r):
        return (r * r + 2.0 * r * c + 1.0) ** e

    tol = max(tol, 1e-14)
    a, ea = integrate.quad(lambda r: r * base(r), 0.0, 1.0, epsabs=tol, epsrel=tol, limit=200)
    b, eb = integrate.quad(base, 0.0, 1.0, weight="alg", wvar=(s - 1.0, 0.0), epsabs=tol,
                           epsrel=tol, limit=200)
    return a + b, ea + eb


def _segment(t0, t1, s, tol):
    """``2 int_{t0}^{t1}`` of the inner integral, with an error bound."""
    if t1 <= t0:
        return 0.0, 0.0
    errs = []

    def f(t):
        v, e = _inner(t, s, tol * 1e-2)
        errs.append(e)
        return v

    with warnings.catch_warnings():
        # roundoff near machine precision; the returned bound still reflects it
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        v, e = integrate.quad(f, t0, t1, epsabs=tol, epsrel=tol, limit=200)
    return 2.0 * v, 2.0 * (e + (t1 - t0) * max(errs, default=0.0))


def M(theta, s, tol=1e-10) -> MValue:
    """``M(theta, s)`` with an absolute error bound; ``0 <= theta < pi``."""
    theta = check_scalar(theta, "theta", lo=0.0, hi=math.pi, lo_inclusive=True)
    s = check_order(s)
    tol = check_scalar(tol, "tol", lo=0.0)
    v, e = _segment(0.0, theta, s, tol)
    return MValue(v, e)


def M_monte_carlo(theta, s, samples=1_000_000, seed=0) -> MValue:
    """Stratified Monte-Carlo estimate of ``M``; ``error`` is 3 standard errors.

    ``r = (1 - v)^{-1/s} - 1`` maps ``v in [0, 1)`` to the half-line and makes the
    integrand bounded, so a jittered ``k x k`` grid in ``(t, v)`` converges fast.
    """
    theta = check_scalar(theta, "theta", lo=0.0, hi=math.pi, lo_inclusive=True)
    s = check_order(s)
    samples = check_scalar(samples, "samples", lo=0, integer=True)
    rng = np.random.default_rng(seed)
    k = max(1, int(math.isqrt(samples)))
    total = 0.0
    var = 0.0
    # strata are processed in row blocks to bound memory
    for i0 in range(0, k, 256):
        rows = np.arange(i0, min(k, i0 + 256))
        cells = (rows[:, None], np.arange(k)[None, :])
        # two samples per stratum give a within-stratum variance estimate
        vals = []
        for _ in range(2):
            t = theta * (cells[0] + rng.random((rows.size, k))) / k
            v = (cells[1] + rng.random((rows.size, k))) / k
            one_m = 1.0 - v
            r = one_m ** (-1.0 / s) - 1.0
            jac = one_m ** (-1.0 / s - 1.0) / s
            f = r * (r * r + 2.0 * r * np.cos(t) + 1.0) ** (-(2.0 + s) / 2.0) * jac
            vals.append(np.nan_to_num(f, nan=0.0, posinf=0.0))
        cellw = 2.0 * theta / (k * k)
        total += cellw * np.sum(0.5 * (vals[0] + vals[1]))
        var += cellw ** 2 * np.sum(0.25 * (vals[0] - vals[1]) ** 2 / 2.0)
    return MValue(float(total), 3.0 * math.sqrt(var))


@dataclass(frozen=True)
class YoungLawSolution:
    theta: float
    residual: float
    M_theta: float
    M_half_pi: float
    bracket: float
    sigma: float
    s: float
    monotone: bool
    anomalies: int

    @property
    def degrees(self):
        return math.degrees(self.theta)

    def to_dict(self):
        return dict(asdict(self), degrees=self.degrees)


class _Scan:
    """Cumulative ``M`` on the grid ``k pi / 64`` so every ``M(theta)`` costs one segment."""

    def __init__(self, s, tol):
        self.s = s
        self.tol = tol
        self.grid = np.arange(1, SCAN_STEPS) * math.pi / SCAN_STEPS
        cum = [0.0]
        err = [0.0]
        prev = 0.0
        for th in self.grid:
            v, e = _segment(prev, th, s, tol)
            cum.append(cum[-1] + v)
            err.append(err[-1] + e)
            prev = th
        self.M_grid = np.array(cum[1:])
        self.M_err = np.array(err[1:])
        half = SCAN_STEPS // 2 - 1
        self.M_half = float(self.M_grid[half])
        self.M_half_err = float(self.M_err[half])
        self.ratio_grid = np.sin(self.grid) ** s * self.M_grid / self.M_half
        d = np.diff(self.ratio_grid)
        self.anomalies = int(np.sum(d <= 0))

    def M_at(self, theta):
        k = int(np.searchsorted(self.grid, theta, side="right")) - 1
        if k < 0:
            base, t0 = 0.0, 0.0
        else:
            base, t0 = float(self.M_grid[k]), float(self.grid[k])
        v, _ = _segment(t0, theta, self.s, self.tol)
        return base + v

    def ratio(self, theta):
        return math.sin(theta) ** self.s * self.M_at(theta) / self.M_half


_SCANS = {}


def _scan(s, tol):
    key = (float(s), float(tol))
    if key not in _SCANS:
        _SCANS[key] = _Scan(*key)
    return _SCANS[key]


def contact_angle(sigma, s, tol=1e-8, max_iter=200) -> YoungLawSolution:
    """Solve ``(sin theta)^s M(theta, s) / M(pi/2, s) = 1 + sigma`` by bisection."""
    sigma = check_sigma(sigma)
    s = check_order(s)
    tol = check_scalar(tol, "tol", lo=0.0)
    sc = _scan(s, min(tol, 1e-10) * 1e-2)
    target = 1.0 + sigma
    g = sc.ratio_grid - target
    half = SCAN_STEPS // 2 - 1
    if sigma == 0.0:
        return YoungLawSolution(math.pi / 2, 0.0, sc.M_half, sc.M_half, 0.0, sigma, s,
                                sc.anomalies == 0, sc.anomalies)
    idx = np.flatnonzero((g[:-1] < 0) & (g[1:] >= 0) | (g[:-1] > 0) & (g[1:] <= 0))
    if idx.size == 0:
        raise NoBracketError(
            f"no sign change of the Young residual for sigma={sigma}, s={s} on "
            f"[pi/{SCAN_STEPS}, pi - pi/{SCAN_STEPS}]")
    k = int(idx[np.argmin(np.abs(idx - half))])
    lo, hi = float(sc.grid[k]), float(sc.grid[k + 1])
    glo = g[k]
    res = glo
    mid = lo
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        res = sc.ratio(mid) - target
        if abs(res) <= tol and hi - lo <= 1e-12 + tol:
            break
        if (res < 0) == (glo < 0):
            lo, glo = mid, res
        else:
            hi = mid
    else:
        warnings.warn(f"bisection stopped with residual {res:.3g}", NotConvergedWarning)
    return YoungLawSolution(mid, abs(res), sc.M_at(mid), sc.M_half, hi - lo, sigma, s,
                            sc.anomalies == 0, sc.anomalies)


def residual_scan(s, tol=1e-10):
    """``(theta_k, g(theta_k) + sigma + 1)`` on the bracketing grid, plus anomaly count."""
    sc = _scan(check_order(s), tol)
    return sc.grid.copy(), sc.ratio_grid.copy(), sc.anomalies


@dataclass(frozen=True)
class YoungTable:
    sigmas: tuple
    s_values: tuple
    theta: np.ndarray  # shape (len(s_values), len(sigmas)); nan where no bracket
    residual: np.ndarray
    row_monotone: tuple

    def to_csv(self):
        lines = ["s,sigma,theta,degrees,residual"]
        for i, s in enumerate(self.s_values):
            for j, sg in enumerate(self.sigmas):
                th = self.theta[i, j]
                lines.append(f"{s:.17g},{sg:.17g},{th:.17g},{math.degrees(th):.17g},"
                             f"{self.residual[i, j]:.3e}")
        return "\n".join(lines) + "\n"


def young_table(sigmas, s_values, tol=1e-8) -> YoungTable:
    sigmas = tuple(float(x) for x in sigmas)
    s_values = tuple(float(x) for x in s_values)
    th = np.full((len(s_values), len(sigmas)), np.nan)
    rs = np.full_like(th, np.nan)
    for i, s in enumerate(s_values):
        for j, sg in enumerate(sigmas):
            try:
                sol = contact_angle(sg, s, tol)
            except NoBracketError:
                continue
            th[i, j] = sol.theta
            rs[i, j] = sol.residual
    mono = []
    for i in range(len(s_values)):
        row = th[i][np.argsort(sigmas)]
        row = row[np.isfinite(row)]
        mono.append(bool(np.all(np.diff(row) > 0)))
    return YoungTable(sigmas, s_values, th, rs, tuple(mono))


class YoungLawSolver(BaseEstimator):
    """Estimator wrapper: ``fit`` tabulates ``M`` for one order ``s``; ``predict`` maps
    adhesion coefficients to contact angles."""

    def __init__(self, s=0.5, tol=1e-8):
        self.s = s
        self.tol = tol

    def fit(self, X=None, y=None):
        check_order(self.s)
        check_scalar(self.tol, "tol", lo=0.0)
        sc = _scan(float(self.s), min(self.tol, 1e-10) * 1e-2)
        self.M_half_pi_ = sc.M_half
        self.scan_anomalies_ = sc.anomalies
        return self

    def predict(self, sigmas):
        if not hasattr(self, "M_half_pi_"):
            self.fit()
        sig = np.atleast_1d(np.asarray(sigmas, dtype=float)).ravel()
        self.solutions_ = [contact_angle(x, self.s, self.tol) for x in sig]
        return np.array([sol.theta for sol in self.solutions_])
