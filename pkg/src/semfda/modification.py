"""Refitting forecast scores of a future cohort against its partially observed mortality.

The score vector of a target cohort is moved inside the box formed by the
per-component prediction intervals so that the implied conditional mortality
matches the ages already observed for that cohort as closely as possible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .arima import ScoreForecast
from .core import KeyKind, SemParams, admissible_clamp, q_kind
from .errors import ApplicabilityError, DegenerateConditioningError, SemError
from .fpca import FpcaModel
from .tsv import write_tsv

log = logging.getLogger(__name__)

PREDICTION_COLUMNS = ("kind", "cohort", "age", "q_pred", "q_pred_modified")
MONOTONE_TOL = 1e-12
MAX_RESTARTS = 5


@dataclass
class MortalityPrediction:
    ages: np.ndarray
    q: np.ndarray
    clamped: np.ndarray  # ages whose reconstructed key left the admissible domain
    nonmonotone: bool = False

    @property
    def flagged(self) -> bool:
        return self.nonmonotone or bool(self.clamped.any())


@dataclass
class ModifiedKey:
    cohort: int
    kind: KeyKind
    scores_tilde: np.ndarray
    box: np.ndarray  # K x 2, lower and upper bound per component
    fit_ages: np.ndarray
    objective: float
    objective_at_forecast: float
    scores_forecast: np.ndarray = field(default_factory=lambda: np.zeros(0))
    delta: float = 0.95


def _conditional_free(q_t, q_s):
    """``(q_t - q_s) / (1 - q_s)`` without the monotonicity check, clipped to [0, 1]."""
    if q_s >= 1.0:
        raise DegenerateConditioningError("predicted mortality at the conditioning age is 1")
    return np.clip((q_t - q_s) / (1.0 - q_s), 0.0, 1.0)


def predicted_mortality(model: FpcaModel, scores, p: SemParams, ages=None, kind=None):
    """Conditional mortality ``q(t | S)`` implied by ``mean + sum_j z_j e_j``.

    ``scores`` may be a score vector or a :class:`ModifiedKey`. Keys outside the
    admissible domain are clamped to its boundary and reported in ``clamped``;
    output that decreases with age is reported through ``nonmonotone``.
    """
    if isinstance(scores, ModifiedKey):
        kind = scores.kind if kind is None else kind
        scores = scores.scores_tilde
    kind = KeyKind(kind if kind is not None else model.kind)
    ages = np.arange(p.S, p.w + 1) if ages is None else np.asarray(ages)
    if ages.size == 0 or ages.min() < p.S or ages.max() > p.w:
        raise SemError(f"prediction ages must lie in [{p.S}, {p.w}]")
    coeffs = model.key_coeffs(scores)
    design = model.basis.design(np.concatenate([[p.S], ages]).astype(float))
    key, moved = admissible_clamp(kind, design @ coeffs, p)
    q = q_kind(kind, key, p)
    cond = _conditional_free(q[1:], q[0])
    nonmono = bool(np.any(np.diff(cond) < -MONOTONE_TOL))
    if moved.any():
        log.warning("%s key left the admissible domain at %d ages; clamped", kind, moved.sum())
    if nonmono:
        log.warning("%s predicted mortality decreases with age", kind)
    return MortalityPrediction(ages, cond, moved[1:] | moved[0], nonmono)


def _objective_factory(model, kind, p, fit_ages, data):
    design = model.basis.design(np.concatenate([[p.S], fit_ages]).astype(float))

    def objective(z):
        # same arithmetic as predicted_mortality, so self-generated data fit exactly
        key, _ = admissible_clamp(kind, design @ model.key_coeffs(z), p)
        q = q_kind(kind, key, p)
        if q[0] >= 1.0:
            return np.inf
        cond = np.clip((q[1:] - q[0]) / (1.0 - q[0]), 0.0, 1.0)
        r = cond - data
        return float(r @ r)

    return objective


def modify_scores(
    forecasts: list[ScoreForecast],
    model: FpcaModel,
    partial,
    p: SemParams,
    delta: float,
    cohort: int,
    last_training_cohort: int,
    last_data_year: int | None = None,
    kind=None,
) -> ModifiedKey:
    """Least-squares refit of forecast scores inside their prediction-interval box.

    Parameters
    ----------
    forecasts : list of ScoreForecast
        One per selected component, in component order.
    partial : array_like
        Observed conditional mortality ``q(t | S)`` for ``t = S, S+1, ...``; only
        ages up to ``last_data_year - cohort`` are used.
    last_training_cohort : int
        ``c_m``; the forecast horizon of ``cohort`` is ``cohort - c_m``.
    last_data_year : int, optional
        Calendar year of the last observation, ``c_m + w`` by default.

    Raises
    ------
    ApplicabilityError
        When the cohort has no observed ages beyond ``S`` or lies outside the
        forecast range. The unmodified forecast should be used instead.
    """
    kind = KeyKind(kind if kind is not None else model.kind)
    c_m = int(last_training_cohort)
    year = c_m + p.w if last_data_year is None else int(last_data_year)
    h = int(cohort) - c_m
    last_age = year - int(cohort)
    if h < 1:
        raise ApplicabilityError(f"cohort {cohort} is not after the last training cohort {c_m}")
    if last_age <= p.S:
        raise ApplicabilityError(
            f"cohort {cohort}: no mortality observed beyond age {p.S} "
            f"(last age {last_age}); use the unmodified forecast"
        )
    K = model.K_selected
    if len(forecasts) < K:
        raise SemError(f"{len(forecasts)} score forecasts given, model selects {K}")
    if any(fc.horizon < h for fc in forecasts[:K]):
        raise ApplicabilityError(f"cohort {cohort}: forecasts do not reach horizon {h}")

    partial = np.asarray(partial, dtype=float)
    last_age = min(last_age, p.S + partial.size - 1, p.w)
    if last_age <= p.S:
        raise ApplicabilityError(f"cohort {cohort}: partial data cover no age beyond {p.S}")
    fit_ages = np.arange(p.S + 1, last_age + 1)
    data = partial[1 : fit_ages.size + 1]
    if np.any(np.isnan(data)):
        raise SemError(f"cohort {cohort}: partial mortality data contain gaps")

    point = np.array([fc.points[h - 1] for fc in forecasts[:K]])
    box = np.array([fc.interval(delta, h) for fc in forecasts[:K]])
    objective = _objective_factory(model, kind, p, fit_ages, data)
    z_tilde, best = _box_minimize(objective, point, box)
    f_point = objective(point)
    if not best < f_point:  # keep the forecast unless the search strictly improves on it
        z_tilde, best = point.copy(), f_point
    return ModifiedKey(
        cohort=int(cohort),
        kind=kind,
        scores_tilde=z_tilde,
        box=box,
        fit_ages=np.arange(p.S, last_age + 1),
        objective=best,
        objective_at_forecast=f_point,
        scores_forecast=point,
        delta=float(delta),
    )


def _nelder_mead(f, u0, n):
    simplex = [u0]
    for i in range(n):
        v = u0.copy()
        v[i] = v[i] + 0.25 if v[i] <= 0.5 else v[i] - 0.25
        simplex.append(v)
    return minimize(
        f,
        u0,
        method="Nelder-Mead",
        bounds=[(0.0, 1.0)] * n,
        options={
            "initial_simplex": np.array(simplex),
            "xatol": 1e-9,
            "fatol": 0.0,
            "maxiter": 4000 * n,
            "maxfev": 4000 * n,
        },
    )


def _box_minimize(objective, start, box):
    """Nelder-Mead in unit-box coordinates, from ``start`` and from the box centre.

    Each start is restarted from its best point with a fresh simplex until a
    run brings no improvement (at most ``MAX_RESTARTS`` times). Components whose interval has zero width stay at their start value.
    """
    lo, hi = box[:, 0], box[:, 1]
    width = hi - lo
    free = width > 0
    if not free.any():
        return start.copy(), objective(start)

    def to_z(u):
        z = start.copy()
        z[free] = lo[free] + np.clip(u, 0.0, 1.0) * width[free]
        return z

    def f(u):
        return objective(to_z(u))

    n = int(free.sum())
    u_start = np.clip((start[free] - lo[free]) / width[free], 0.0, 1.0)
    best_u, best_f = u_start, f(u_start)
    for u0 in (u_start, np.full(n, 0.5)):
        u, fu = u0, f(u0)
        # a simplex can collapse against a face of the box; restarting from the
        # best point with a fresh simplex lets it move along the face again
        for _ in range(MAX_RESTARTS + 1):
            res = _nelder_mead(f, u, n)
            x, fx = np.clip(res.x, 0.0, 1.0), float(res.fun)
            improved = fx < fu
            if improved:
                u, fu = x, fx
            if not improved or fu == 0.0:
                break
        if fu < best_f:
            best_u, best_f = u, fu
    return to_z(best_u), best_f


def write_predictions(path, rows) -> None:
    """Prediction dump. ``rows`` yields ``(kind, cohort, age, q_pred, q_pred_modified)``."""
    write_tsv(path, "predictions", PREDICTION_COLUMNS, rows)
