"""Mean squared error of predicted against observed conditional mortality, and tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import KeyKind
from .errors import DataQualityError, SemError
from .hmd import CohortMortality, conditional_data
from .tsv import write_tsv

VARIANTS = ("unmodified", "modified")
MSE_COLUMNS = ("kind", "cohort", "variant", "delta", "c_tilde", "w", "n_ages", "mse")


@dataclass
class MseReport:
    kind: KeyKind
    cohort: int
    variant: str
    mse: float
    age_range: tuple[int, int]
    n_ages: int
    delta: float | None = None

    @property
    def label(self) -> str:
        if self.variant == "modified" and self.delta is not None:
            return f"{self.kind.value} modified d={self.delta:g}"
        return f"{self.kind.value} {self.variant}"


def mse(pred, data, c_tilde: int, w: int) -> float:
    """``(w - c_tilde + 1)^-1 sum_{t=c_tilde}^{w} (pred(t) - data(t))^2``.

    Both vectors hold the values at ages ``c_tilde..w``.
    """
    pred = np.asarray(pred, dtype=float)
    data = np.asarray(data, dtype=float)
    n = int(w) - int(c_tilde) + 1
    if n < 1:
        raise SemError(f"empty age range [{c_tilde}, {w}]")
    if pred.shape != (n,) or data.shape != (n,):
        raise SemError(
            f"length mismatch: ages {c_tilde}..{w} need {n} values, "
            f"got {pred.shape} predicted and {data.shape} observed"
        )
    d = pred - data
    return float(d @ d) / n


def recondition(q_cond_s, ages, S0: int) -> np.ndarray:
    """Turn ``q(t | S)`` at ``ages`` into ``q(t | S0)`` for the ages ``>= S0``.

    Uses ``q(t|S0) = (q(t|S) - q(S0|S)) / (1 - q(S0|S))``.
    """
    ages = np.asarray(ages)
    q = np.asarray(q_cond_s, dtype=float)
    hit = np.nonzero(ages == S0)[0]
    if hit.size == 0:
        raise SemError(f"age {S0} is not among the predicted ages")
    q0 = q[hit[0]]
    if q0 >= 1.0:
        raise SemError(f"predicted q({S0}|S) = 1; cannot condition on age {S0}")
    keep = ages >= S0
    return np.clip((q[keep] - q0) / (1.0 - q0), 0.0, 1.0)


def evaluation_range(cohort: int, last_data_year: int, w: int, first_forecast_age: bool = False):
    """Age range ``[c_tilde, w]`` with ``c_tilde = last_data_year - cohort``.

    With ``first_forecast_age`` the range starts one age later, at the first
    age that no data of the cohort covered at forecast time.
    """
    c_tilde = int(last_data_year) - int(cohort) + (1 if first_forecast_age else 0)
    if c_tilde > w:
        raise SemError(f"cohort {cohort}: evaluation range [{c_tilde}, {w}] is empty")
    return c_tilde, w


def evaluate_cohort(
    kind,
    variant: str,
    pred_ages,
    pred_q_cond_s,
    holdout: CohortMortality,
    S0: int,
    last_data_year: int,
    w: int,
    first_forecast_age: bool = False,
    delta: float | None = None,
) -> MseReport:
    """MSE of one prediction of ``q(t|S)`` against the holdout cohort, both conditioned on ``S0``."""
    if variant not in VARIANTS:
        raise SemError(f"unknown variant {variant!r}")
    pred_ages = np.asarray(pred_ages)
    c_tilde, w_end = evaluation_range(holdout.cohort, last_data_year, w, first_forecast_age)
    c_tilde = max(c_tilde, S0)
    w_end = min(w_end, holdout.w_avail, int(pred_ages.max()))
    if w_end < c_tilde:
        raise DataQualityError(
            f"cohort {holdout.cohort}: predictions and data share no ages in [{c_tilde}, {w}]"
        )
    pred = recondition(pred_q_cond_s, pred_ages, S0)
    pred_ages_s0 = pred_ages[pred_ages >= S0]
    data = conditional_data(holdout, S0)  # ages S0..w_avail
    sel = (pred_ages_s0 >= c_tilde) & (pred_ages_s0 <= w_end)
    ages = pred_ages_s0[sel]
    if ages.size != w_end - c_tilde + 1:
        raise DataQualityError(f"cohort {holdout.cohort}: predicted ages have gaps in [{c_tilde}, {w_end}]")
    value = mse(pred[sel], data[ages - S0], c_tilde, w_end)
    return MseReport(KeyKind(kind), holdout.cohort, variant, value, (c_tilde, w_end), ages.size, delta)


def _column_key(r: MseReport):
    kinds = [KeyKind.ID, KeyKind.IG]
    return (kinds.index(r.kind), VARIANTS.index(r.variant), -1.0 if r.delta is None else r.delta)


def render_table(reports, expected_kinds=(KeyKind.ID, KeyKind.IG)):
    """Aligned text table plus rows for a delimited dump.

    One row per cohort and one column per (kind, variant), ID before IG. A
    (kind, variant) pair with no report at all is left out and named in the
    footer.

    Returns
    -------
    text : str
    header : tuple of str
    rows : list of tuple
    """
    reports = list(reports)
    if not reports:
        raise SemError("no MSE reports to tabulate")
    columns = []
    for r in sorted(reports, key=_column_key):
        if r.label not in columns:
            columns.append(r.label)
    cohorts = sorted({r.cohort for r in reports})
    cell = {(r.cohort, r.label): r.mse for r in reports}
    header = ("cohort", *columns)
    rows = [
        (c, *[cell.get((c, col), float("nan")) for col in columns]) for c in cohorts
    ]
    missing = [
        f"{KeyKind(k).value} {v}"
        for k in expected_kinds
        for v in VARIANTS
        if not any(r.kind is KeyKind(k) and r.variant == v for r in reports)
    ]
    widths = [max(6, len(h)) for h in header]
    lines = ["  ".join(h.rjust(wd) for h, wd in zip(header, widths))]
    for row in rows:
        cells = [str(row[0])] + ["-" if np.isnan(v) else f"{v:.4E}" for v in row[1:]]
        lines.append("  ".join(c.rjust(wd) for c, wd in zip(cells, widths)))
    if missing:
        lines.append("no results for: " + ", ".join(missing))
    return "\n".join(lines) + "\n", header, rows


def write_mse(path, reports) -> None:
    rows = (
        (
            r.kind.value,
            r.cohort,
            r.variant,
            "" if r.delta is None else float(r.delta),
            r.age_range[0],
            r.age_range[1],
            r.n_ages,
            float(r.mse),
        )
        for r in reports
    )
    write_tsv(path, "mse", MSE_COLUMNS, rows)
