"""B-spline expansion of pointwise key estimates and cross-cohort centering."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline

from .errors import DataQualityError, DomainError, SemError
from .tsv import write_tsv

log = logging.getLogger(__name__)

COEFF_DUMP_TAG = "coefficients"
COEFF_DUMP_COLUMNS = ("cohort", "l", "alpha")


@dataclass(frozen=True, eq=False)
class BsplineBasis:
    """Clamped B-spline basis on ``[S, w]`` with equally spaced interior knots.

    ``gram[k, l]`` is the L2 inner product of basis functions ``k`` and ``l``
    over ``[S, w]``.
    """

    S: float
    w: float
    L: int
    order: int
    knots: np.ndarray
    gram: np.ndarray

    @property
    def degree(self) -> int:
        return self.order - 1

    @property
    def interior_knots(self) -> np.ndarray:
        return self.knots[self.order : -self.order]

    def _check_domain(self, t: np.ndarray) -> None:
        if np.any(t < self.S) or np.any(t > self.w):
            raise DomainError(f"evaluation outside [{self.S}, {self.w}]")

    def design(self, t) -> np.ndarray:
        """Matrix of basis values, one row per point in ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        self._check_domain(t)
        return BSpline.design_matrix(t, self.knots, self.degree).toarray()

    def integrals(self) -> np.ndarray:
        """``int_S^w h_l(t) dt`` for every basis function."""
        return (self.knots[self.order :] - self.knots[: self.L]) / self.order

    def spec(self) -> dict:
        return {"S": self.S, "w": self.w, "L": self.L, "order": self.order}


def make_basis(S: float, w: float, L: int = 20, order: int = 4) -> BsplineBasis:
    """Build the basis and its Gram matrix.

    The Gram matrix uses Gauss-Legendre quadrature on every knot span with
    ``order + 1`` nodes, exact for the piecewise polynomial products.
    """
    if order < 1:
        raise SemError("spline order must be at least 1")
    if L < order:
        raise SemError(f"need L >= order, got L={L}, order={order}")
    if not S < w:
        raise SemError(f"need S < w, got S={S}, w={w}")
    breaks = np.linspace(S, w, L - order + 2)
    knots = np.concatenate([np.full(order - 1, S), breaks, np.full(order - 1, w)]).astype(float)
    nodes, weights = np.polynomial.legendre.leggauss(order + 1)
    a, b = breaks[:-1], breaks[1:]
    pts = (0.5 * (b - a)[:, None] * nodes[None, :] + 0.5 * (a + b)[:, None]).ravel()
    wts = (0.5 * (b - a)[:, None] * weights[None, :]).ravel()
    H = BSpline.design_matrix(pts, knots, order - 1).toarray()
    gram = H.T @ (wts[:, None] * H)
    gram = 0.5 * (gram + gram.T)
    return BsplineBasis(float(S), float(w), int(L), int(order), knots, gram)


def eval_curve(coeffs, basis: BsplineBasis, t):
    """``sum_l coeffs[l] h_l(t)``; ``coeffs`` may be a vector or a row-per-curve matrix."""
    coeffs = np.asarray(coeffs, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    out = basis.design(t_arr) @ coeffs.T
    if t_arr.ndim == 0:
        return out[0]
    return out


def fit_coeffs(ages, values, basis: BsplineBasis, observed=None):
    """Least-squares B-spline coefficients for key values sampled at ``ages``.

    Solves the normal equations by Cholesky. A ridge of ``1e-10 * trace`` is
    added only when the factorisation fails or the system is numerically
    singular; the second return value reports whether that happened.
    """
    ages = np.asarray(ages, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = ~np.isnan(values) if observed is None else (np.asarray(observed) & ~np.isnan(values))
    n = int(mask.sum())
    if n < basis.L:
        raise DataQualityError(f"{n} observed ages cannot determine {basis.L} coefficients")
    X = basis.design(ages[mask])
    y = values[mask]
    XtX = X.T @ X
    Xty = X.T @ y
    ridged = False
    try:
        if np.linalg.cond(XtX) > 1e13:
            raise linalg.LinAlgError("ill-conditioned")
        coeffs = linalg.cho_solve(linalg.cho_factor(XtX), Xty)
    except linalg.LinAlgError:
        ridged = True
        log.warning("B-spline design numerically singular; adding ridge")
        XtX = XtX + 1e-10 * np.trace(XtX) * np.eye(basis.L)
        coeffs = linalg.cho_solve(linalg.cho_factor(XtX), Xty)
    return coeffs, ridged


@dataclass
class FunctionalDataSet:
    basis: BsplineBasis
    cohorts: list
    coeffs: np.ndarray
    mean_coeffs: np.ndarray
    centered: np.ndarray

    @property
    def m(self) -> int:
        return len(self.cohorts)


def center(coeffs, basis: BsplineBasis, cohorts=None) -> FunctionalDataSet:
    """Subtract the cross-cohort mean coefficient vector."""
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    m = coeffs.shape[0]
    if m < 2:
        raise SemError(f"centering needs m >= 2 cohorts, got {m}")
    cohorts = list(range(m)) if cohorts is None else list(cohorts)
    mean = coeffs.mean(axis=0)
    return FunctionalDataSet(basis, cohorts, coeffs, mean, coeffs - mean)


def fit_panel(estimates, basis: BsplineBasis) -> FunctionalDataSet:
    """Fit coefficients for every cohort's key estimates and center them."""
    rows = []
    for e in estimates:
        c, ridged = fit_coeffs(e.ages, e.values, basis, observed=e.observed)
        if ridged:
            log.warning("cohort %s: ridge-regularised spline fit", e.cohort)
        rows.append(c)
    return center(np.array(rows), basis, [e.cohort for e in estimates])


def write_coefficients(path, fds: FunctionalDataSet) -> None:
    rows = (
        (c, l + 1, float(a))
        for c, vec in zip(fds.cohorts, fds.coeffs)
        for l, a in enumerate(vec)
    )
    write_tsv(path, COEFF_DUMP_TAG, COEFF_DUMP_COLUMNS, rows)
