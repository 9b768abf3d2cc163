"""Small-order ARIMA fitting and forecasting for principal-component score series.

Orders are chosen automatically: the differencing order ``d`` by repeated KPSS
level-stationarity tests, then ``(p, q)`` by AICc over a small grid. Parameters
are estimated by conditional sum of squares. AR and MA polynomials are
parametrised through partial autocorrelations mapped by ``tanh``, so every
candidate is stationary and invertible by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter
from scipy.stats import norm

from .errors import SemError
from .tsv import write_tsv

log = logging.getLogger(__name__)

MIN_LENGTH = 10
KPSS_CRITICAL_5PCT = 0.463
ROOT_MARGIN = 1e-6
FORECAST_COLUMNS = ("kind", "component", "cohort", "point", "lo80", "hi80", "lo95", "hi95")


@dataclass
class ArimaSpec:
    p: int
    d: int
    q: int
    phi: np.ndarray
    theta_ma: np.ndarray
    intercept: float
    sigma2: float
    aicc: float
    include_constant: bool = True
    fallback: bool = False

    @property
    def order(self) -> tuple[int, int, int]:
        return (self.p, self.d, self.q)

    def psi_weights(self, n: int) -> np.ndarray:
        """First ``n`` coefficients of ``theta(B) / (phi(B) (1 - B)^d)``, starting at psi_0 = 1."""
        ar = np.array([1.0, *(-self.phi)])
        for _ in range(self.d):
            ar = np.convolve(ar, [1.0, -1.0])
        ma = np.array([1.0, *self.theta_ma])
        impulse = np.zeros(n)
        impulse[0] = 1.0
        return lfilter(ma, ar, impulse)


@dataclass
class ScoreForecast:
    component: int
    horizon: int
    points: np.ndarray
    intervals: dict = field(default_factory=dict)  # delta -> (lower, upper)
    spec: ArimaSpec | None = None

    def interval(self, delta: float, step: int) -> tuple[float, float]:
        """Interval for a forecast ``step`` in ``1..horizon`` at level ``delta``."""
        lo, hi = self.intervals[_delta_key(delta)]
        return float(lo[step - 1]), float(hi[step - 1])


def _delta_key(delta) -> float:
    return round(float(delta), 12)


# parametrisation helpers -----------------------------------------------------


def _pacf_to_coeffs(r: np.ndarray) -> np.ndarray:
    """Durbin-Levinson map from partial autocorrelations in (-1, 1) to AR coefficients."""
    r = np.asarray(r)
    if r.size <= 2:
        # closed forms for the orders used in practice
        return r.copy() if r.size < 2 else np.array([r[0] * (1 - r[1]), r[1]])
    a = np.zeros(0)
    for k, rk in enumerate(r):
        a = np.append(a - rk * a[::-1], rk) if k else np.array([rk])
    return a


def _pacf_jacobian(r: np.ndarray) -> np.ndarray:
    """Exact Jacobian of :func:`_pacf_to_coeffs` by complex-step differentiation."""
    h = 1e-30
    jac = np.empty((r.size, r.size))
    for k in range(r.size):
        rc = r.astype(complex)
        rc[k] += 1j * h
        jac[:, k] = _pacf_to_coeffs(rc).imag / h
    return jac


def _unpack(u, p, q):
    phi = _pacf_to_coeffs(np.tanh(u[:p]))
    theta = -_pacf_to_coeffs(np.tanh(u[p : p + q]))
    return phi, theta


def _min_root_modulus(coeffs, sign):
    """Smallest root modulus of ``1 + sign * sum c_i z^i``."""
    poly = np.array([1.0, *(sign * np.asarray(coeffs, dtype=float))])
    # a negligible top coefficient only adds a root of huge modulus
    keep = np.nonzero(np.abs(poly) > 1e-14 * np.abs(poly).max())[0]
    roots = np.roots(poly[: keep[-1] + 1][::-1])
    return float(np.min(np.abs(roots))) if roots.size else np.inf


def _admissible(phi, theta) -> bool:
    return (
        _min_root_modulus(phi, -1.0) > 1 + ROOT_MARGIN
        and _min_root_modulus(theta, 1.0) > 1 + ROOT_MARGIN
    )


# estimation ------------------------------------------------------------------


def difference(series, d: int) -> np.ndarray:
    w = np.asarray(series, dtype=float)
    for _ in range(d):
        w = np.diff(w)
    return w


def kpss_statistic(series) -> float:
    """KPSS level-stationarity statistic with Bartlett long-run variance.

    The lag truncation is ``trunc(4 (n/100)^(1/4))``.
    """
    y = np.asarray(series, dtype=float)
    n = y.size
    e = y - y.mean()
    s = np.cumsum(e)
    lags = int(4 * (n / 100.0) ** 0.25)
    lrv = e @ e / n
    for k in range(1, lags + 1):
        lrv += 2 * (1 - k / (lags + 1)) * (e[k:] @ e[:-k]) / n
    if lrv <= 0:
        return 0.0 if s @ s == 0 else np.inf
    return float(s @ s / (n * n * lrv))


def choose_d(series, max_d: int = 2) -> int:
    """Smallest d whose differenced series passes the 5% KPSS level test."""
    w = np.asarray(series, dtype=float)
    for d in range(max_d + 1):
        if d == max_d or w.size < MIN_LENGTH:
            return d
        if np.ptp(w) == 0 or kpss_statistic(w) < KPSS_CRITICAL_5PCT:
            return d
        w = np.diff(w)
    return max_d


def css_residuals(w, phi, theta, mu, start: int) -> np.ndarray:
    """Conditional residuals for ``t >= start`` with zero pre-sample innovations."""
    x = np.asarray(w, dtype=float) - mu
    u = x[start:].copy()
    for i, c in enumerate(phi, start=1):
        u -= c * x[start - i : x.size - i]
    if len(theta):
        u = lfilter([1.0], [1.0, *theta], u)
    return u


def _fit_order(w, p, q, constant, start):
    n_eff = w.size - start
    mu0 = float(w.mean()) if constant else 0.0
    scale = float(np.std(w)) or 1.0
    norm_sse = n_eff * scale**2

    def unpack(v):
        phi, theta = _unpack(v, p, q)
        mu = mu0 + scale * v[p + q] if constant else 0.0
        return phi, theta, mu

    def sse_and_grad(v):
        phi, theta, mu = unpack(v)
        x = w - mu
        e = css_residuals(w, phi, theta, mu, start)
        ma = [1.0, *theta]
        cols = []
        # d e / d phi_i and d e / d theta_j are filtered lagged regressors
        for i in range(1, p + 1):
            cols.append(lfilter([1.0], ma, -x[start - i : x.size - i]))
        for j in range(1, q + 1):
            lagged = np.concatenate([np.zeros(j), e[:-j]])
            cols.append(lfilter([1.0], ma, -lagged))
        grad = np.empty(v.size)
        if cols:
            g = 2.0 * np.array(cols) @ e
            if p:
                r = np.tanh(v[:p])
                grad[:p] = (g[:p] @ _pacf_jacobian(r)) * (1 - r**2)
            if q:
                r = np.tanh(v[p : p + q])
                grad[p : p + q] = -(g[p:] @ _pacf_jacobian(r)) * (1 - r**2)
        if constant:
            dmu = lfilter([1.0], ma, np.full(e.size, -(1.0 - np.sum(phi))))
            grad[-1] = 2.0 * (dmu @ e) * scale
        # normalised so the objective is O(1) and gtol is scale free
        return float(e @ e) / norm_sse, grad / norm_sse

    nvar = p + q + int(constant)
    if nvar:
        opts = {"gtol": 1e-9}
        res = minimize(sse_and_grad, np.zeros(nvar), jac=True, method="BFGS", options=opts)
        v = res.x
        if not res.success:
            # restart once from the stopping point (line-search failures near flat optima)
            res2 = minimize(sse_and_grad, v, jac=True, method="BFGS", options=opts)
            if res2.fun <= res.fun:
                v = res2.x
    else:
        v = np.zeros(0)
    phi, theta, mu = unpack(v)
    e = css_residuals(w, phi, theta, mu, start)
    sigma2 = float(e @ e) / n_eff
    if not sigma2 > 0:
        sigma2 = np.finfo(float).tiny
    k = nvar + 1
    loglik = -0.5 * n_eff * (np.log(2 * np.pi * sigma2) + 1.0)
    aicc = -2 * loglik + 2 * k + (2 * k * (k + 1) / (n_eff - k - 1) if n_eff - k - 1 > 0 else np.inf)
    return phi, theta, mu, sigma2, aicc


def fit_order(series, p: int, d: int, q: int, constant: bool | None = None, start=None) -> ArimaSpec:
    """Fit one ARIMA(p, d, q) by conditional sum of squares.

    A constant (mean for ``d = 0``, drift for ``d = 1``) is included by default
    when ``d <= 1``. ``start`` is the first time index whose residual enters the
    sum of squares; it defaults to ``p``.
    """
    if constant is None:
        constant = d <= 1
    w = difference(series, d)
    start = p if start is None else start
    if w.size - start < MIN_LENGTH:
        raise SemError(
            f"series too short for ARIMA({p},{d},{q}): {w.size} values after differencing, "
            f"need at least {MIN_LENGTH + start}"
        )
    phi, theta, mu, sigma2, aicc = _fit_order(w, p, q, constant, start)
    return ArimaSpec(p, d, q, phi, theta, mu, sigma2, aicc, include_constant=constant)


def fit_arima(series, max_p: int = 2, max_d: int = 2, max_q: int = 2) -> ArimaSpec:
    """Automatic order selection: KPSS for d, then AICc over ``p <= max_p, q <= max_q``.

    All candidates for a given d share the same conditioning start ``max_p``
    so their AICc values are computed on the same residual count.
    """
    y = np.asarray(series, dtype=float)
    if not np.all(np.isfinite(y)):
        raise SemError("score series contains non-finite values")
    if y.size - min(max_d, 1) < MIN_LENGTH:
        raise SemError(f"series too short: {y.size} values, need at least {MIN_LENGTH + 1}")
    d = choose_d(y, max_d)
    w = difference(y, d)
    start = max_p
    if w.size - start < MIN_LENGTH:
        raise SemError(
            f"series too short: {w.size} values after differencing (d={d}), "
            f"need at least {MIN_LENGTH + start}"
        )
    best = None
    for p in range(max_p + 1):
        for q in range(max_q + 1):
            spec = fit_order(y, p, d, q, start=start)
            if not _admissible(spec.phi, spec.theta_ma):
                continue
            if best is None or spec.aicc < best.aicc - 1e-12:
                best = spec
    if best is None:
        log.warning("no admissible ARIMA candidate; falling back to a random walk with drift")
        best = fit_order(y, 0, 1, 0, constant=True)
        best.fallback = True
    log.debug("selected ARIMA%s aicc=%.4f", best.order, best.aicc)
    return best


# forecasting -----------------------------------------------------------------


def point_forecast(spec: ArimaSpec, series, h: int) -> np.ndarray:
    """Point forecasts for steps 1..h by the ARMA recursion on the differenced series."""
    y = np.asarray(series, dtype=float)
    w = difference(y, spec.d)
    mu = spec.intercept
    e = css_residuals(w, spec.phi, spec.theta_ma, mu, spec.p)
    x = list(w - mu)
    resid = list(np.concatenate([np.zeros(spec.p), e]))
    for _ in range(h):
        val = sum(c * x[-i] for i, c in enumerate(spec.phi, start=1))
        val += sum(c * resid[-j] for j, c in enumerate(spec.theta_ma, start=1))
        x.append(val)
        resid.append(0.0)
    fw = np.array(x[-h:]) + mu
    # undo differencing, one level at a time
    levels = [y]
    for _ in range(spec.d):
        levels.append(np.diff(levels[-1]))
    for k in range(spec.d, 0, -1):
        fw = levels[k - 1][-1] + np.cumsum(fw)
    return fw


def forecast(spec: ArimaSpec, series, h: int, deltas=(0.95,), component: int = 1) -> ScoreForecast:
    """Point forecasts and Gaussian delta-prediction intervals for horizons 1..h."""
    if h < 1:
        raise SemError(f"horizon must be >= 1, got {h}")
    points = point_forecast(spec, series, h)
    psi = spec.psi_weights(h)
    sd = np.sqrt(spec.sigma2 * np.cumsum(psi**2))
    intervals = {}
    for delta in deltas:
        if not 0 < delta < 1:
            raise SemError(f"delta must lie in (0, 1), got {delta}")
        half = norm.ppf(0.5 * (1 + delta)) * sd
        intervals[_delta_key(delta)] = (points - half, points + half)
    return ScoreForecast(component, h, points, intervals, spec)


def write_forecasts(path, records) -> None:
    """Forecast dump. ``records`` yields ``(kind, component, cohort, point, lo80, hi80, lo95, hi95)``."""
    write_tsv(path, "score-forecast", FORECAST_COLUMNS, records)
