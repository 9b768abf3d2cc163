"""Human Mortality Database cohort life tables and empirical mortality curves."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .core import SemParams
from .errors import DataQualityError, DegenerateConditioningError, ParseError
from .tsv import read_tsv, write_tsv

HMD_COLUMNS = ("Year", "Age", "mx", "qx", "ax", "lx", "dx", "Lx", "Tx", "ex")
NORMALIZED_TAG = "normalized-mortality"
NORMALIZED_COLUMNS = ("cohort", "age", "q")


@dataclass(frozen=True)
class LifeTableRow:
    cohort: int
    age: int
    qx: float | None
    lx: float | None
    line: int = 0

    @property
    def missing(self) -> bool:
        return self.qx is None and self.lx is None


@dataclass
class CohortMortality:
    """Unconditional cumulative death probabilities of one cohort at ages 0..w_avail."""

    cohort: int
    q_data: np.ndarray

    def __post_init__(self):
        self.q_data = np.asarray(self.q_data, dtype=float)
        q = self.q_data
        if q.ndim != 1 or q.size == 0:
            raise DataQualityError(f"cohort {self.cohort}: empty mortality curve")
        if np.any((q < 0) | (q > 1)) or np.any(np.isnan(q)):
            raise DataQualityError(f"cohort {self.cohort}: mortality outside [0, 1]")
        if np.any(np.diff(q) < 0):
            bad = np.nonzero(np.diff(q) < 0)[0] + 1
            raise DataQualityError(
                f"cohort {self.cohort}: mortality decreases at ages {bad.tolist()}"
            )

    @property
    def ages(self) -> np.ndarray:
        return np.arange(self.q_data.size)

    @property
    def w_avail(self) -> int:
        return self.q_data.size - 1

    def truncated(self, last_age: int) -> "CohortMortality":
        """Copy restricted to ages ``0..last_age``."""
        return CohortMortality(self.cohort, self.q_data[: last_age + 1].copy())


@dataclass
class CohortPanel:
    """Mortality curves for consecutive birth cohorts."""

    curves: dict[int, CohortMortality]
    params: SemParams = field(default_factory=SemParams)

    @property
    def cohorts(self) -> list[int]:
        return sorted(self.curves)

    def __getitem__(self, cohort: int) -> CohortMortality:
        return self.curves[cohort]

    def __contains__(self, cohort: int) -> bool:
        return cohort in self.curves

    def subset(self, cohorts: Iterable[int]) -> "CohortPanel":
        missing = [c for c in cohorts if c not in self.curves]
        if missing:
            raise DataQualityError(f"cohorts not in panel: {missing}")
        return CohortPanel({c: self.curves[c] for c in cohorts}, self.params)


def _parse_value(token: str, lineno: int):
    if token == ".":
        return None
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"non-numeric field {token!r}", lineno) from None


def parse_cohort_lifetable(stream: TextIO | Iterable[str]) -> list[LifeTableRow]:
    """Parse an HMD cohort life-table text file.

    The file carries a short preamble and then whitespace-separated columns
    ``Year Age mx qx ax lx dx Lx Tx ex``. If a column-header line starting
    with ``Year`` is present, data begin after it; otherwise the first two
    lines are skipped. ``.`` marks a missing value and ``110+`` is age 110.
    """
    lines = list(stream)
    if not any(line.strip() for line in lines):
        raise ParseError("empty life-table file")
    start = 2
    for i, line in enumerate(lines[:10]):
        tokens = line.split()
        if tokens and tokens[0] == "Year":
            if tuple(tokens) != HMD_COLUMNS:
                raise ParseError(f"unexpected columns {tokens}", i + 1)
            start = i + 1
            break
    rows = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != len(HMD_COLUMNS):
            raise ParseError(f"expected {len(HMD_COLUMNS)} columns, got {len(tokens)}", lineno)
        try:
            cohort = int(tokens[0])
        except ValueError:
            raise ParseError(f"bad cohort year {tokens[0]!r}", lineno) from None
        age_token = tokens[1].rstrip("+")
        try:
            age = int(age_token)
        except ValueError:
            raise ParseError(f"bad age {tokens[1]!r}", lineno) from None
        qx = _parse_value(tokens[3], lineno)
        lx = _parse_value(tokens[5], lineno)
        rows.append(LifeTableRow(cohort, age, qx, lx, lineno))
    if not rows:
        raise ParseError("life-table file has no data rows")
    return rows


def build_mortality(rows: Iterable[LifeTableRow], cohort: int, p: SemParams) -> CohortMortality:
    """Cumulative death probabilities ``1 - l(t)/l(0)`` for one cohort.

    Falls back to ``1 - prod_{s<t}(1 - qx(s))`` when survivorship is not
    available at age 0. The curve stops at the last age before the first
    missing value, and never beyond the terminal age.
    """
    by_age = {r.age: r for r in rows if r.cohort == cohort}
    if not by_age:
        raise DataQualityError(f"no rows for cohort {cohort}")
    top = min(max(by_age), p.w)
    gaps = [a for a in range(top + 1) if a not in by_age]
    if gaps:
        raise DataQualityError(f"cohort {cohort}: missing ages {gaps}")

    lx = [by_age[a].lx for a in range(top + 1)]
    if lx[0] is not None:
        n = next((i for i, v in enumerate(lx) if v is None), top + 1)
        l = np.array(lx[:n], dtype=float)
        if l[0] <= 0:
            raise DataQualityError(f"cohort {cohort}: l(0) = 0, degenerate cohort")
        q = 1.0 - l / l[0]
    else:
        qx = [by_age[a].qx for a in range(top + 1)]
        n = next((i for i, v in enumerate(qx) if v is None), top + 1)
        if n == 0:
            raise DataQualityError(f"cohort {cohort}: neither lx nor qx at age 0")
        # q(t) needs qx at ages < t, so qx through age n-1 yields q through age n
        surv = np.concatenate([[1.0], np.cumprod(1.0 - np.array(qx[:n], dtype=float))])
        q = 1.0 - surv[: min(n, p.w) + 1]
    q = np.clip(q, 0.0, 1.0)
    q = np.maximum.accumulate(q)
    return CohortMortality(cohort, q)


def panel_from_rows(rows: list[LifeTableRow], p: SemParams, cohorts=None) -> CohortPanel:
    wanted = sorted({r.cohort for r in rows}) if cohorts is None else list(cohorts)
    return CohortPanel({c: build_mortality(rows, c, p) for c in wanted}, p)


def conditional_data(cm: CohortMortality, S: int) -> np.ndarray:
    """Empirical conditional mortality ``q(t|S)`` for ``t = S..w_avail``."""
    if S > cm.w_avail:
        raise DataQualityError(f"cohort {cm.cohort}: no data at conditioning age {S}")
    q_s = cm.q_data[S]
    if q_s >= 1.0:
        raise DegenerateConditioningError(f"cohort {cm.cohort}: q({S}) = 1")
    out = (cm.q_data[S:] - q_s) / (1.0 - q_s)
    return np.maximum.accumulate(np.clip(out, 0.0, 1.0))


def write_normalized(panel: CohortPanel, path) -> None:
    rows = (
        (c, a, float(q)) for c in panel.cohorts for a, q in enumerate(panel[c].q_data)
    )
    write_tsv(path, NORMALIZED_TAG, NORMALIZED_COLUMNS, rows)


def read_normalized(path, p: SemParams) -> CohortPanel:
    raw = read_tsv(path, NORMALIZED_TAG, NORMALIZED_COLUMNS)
    by_cohort: dict[int, list[tuple[int, float]]] = {}
    for n, (c, a, q) in enumerate(raw, start=3):
        try:
            by_cohort.setdefault(int(c), []).append((int(a), float(q)))
        except ValueError:
            raise ParseError(f"{path}: bad row {c!r} {a!r} {q!r}", n) from None
    curves = {}
    for c, pairs in by_cohort.items():
        pairs.sort()
        ages = [a for a, _ in pairs]
        if ages != list(range(len(ages))):
            raise DataQualityError(f"{path}: cohort {c} ages are not 0..n")
        curves[c] = CohortMortality(c, np.array([q for _, q in pairs]))
    return CohortPanel(curves, p)
