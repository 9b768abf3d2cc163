"""Pointwise recovery of key-function values from conditional mortality.

Both closed forms are continuous and strictly monotone in the key, so the
per-age least-squares problem has an exact root whenever the data lie below
the cap. Roots are found with a vectorised bracketed solver (false position
with forced bisection every third step) over all ages of a cohort at once.
"""

from __future__ import annotations

import functools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import KeyKind, SemParams, q_kind
from .errors import DataQualityError, DegenerateConditioningError
from .hmd import CohortMortality, CohortPanel, conditional_data
from .tsv import write_tsv

CAP_MARGIN = 1e-12
MONOTONE_TOL = 1e-9
KEY_DUMP_TAG = "keys"
KEY_DUMP_COLUMNS = ("cohort", "age", "key")


@dataclass
class KeyPointEstimates:
    cohort: int
    kind: KeyKind
    ages: np.ndarray
    values: np.ndarray
    key_at_S: float
    capped: np.ndarray = field(default=None)
    gaps: np.ndarray = field(default=None)
    nonmonotone_ages: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.ages)
        if self.capped is None:
            self.capped = np.zeros(n, dtype=bool)
        if self.gaps is None:
            self.gaps = np.zeros(n, dtype=bool)

    @property
    def observed(self) -> np.ndarray:
        """Mask of ages with a usable (non-gap) estimate."""
        return ~self.gaps


def bracketed_root(g, lo, hi, rtol=4e-16, atol=0.0, max_iter=400):
    """Vectorised root of an increasing function inside ``[lo, hi]``.

    ``g(x, idx)`` evaluates the function for the problems numbered ``idx`` at
    points ``x``. Requires ``g(lo) <= 0 <= g(hi)`` elementwise. Each iteration
    takes a false-position step, replaced by bisection every third iteration
    or when the secant point leaves the bracket, so the bracket at least
    halves every three iterations.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    every = np.arange(lo.size)
    glo, ghi = g(lo, every), g(hi, every)
    if np.any(glo > 0) or np.any(ghi < 0):
        raise ValueError("root is not bracketed")
    done = (glo == 0) | (ghi == 0)
    for it in range(max_iter):
        width = hi - lo
        active = ~done & (width > rtol * np.maximum(np.abs(lo), np.abs(hi)) + atol)
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        a, b, ga, gb = lo[idx], hi[idx], glo[idx], ghi[idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = a - ga * (b - a) / (gb - ga)
        mid = a + 0.5 * (b - a)
        bisect = (it % 3 == 2) | ~np.isfinite(x) | (x <= a) | (x >= b)
        x = np.where(bisect, mid, x)
        gx = g(x, idx)
        left = gx <= 0
        lo[idx] = np.where(left, x, a)
        glo[idx] = np.where(left, gx, ga)
        hi[idx] = np.where(left, b, x)
        ghi[idx] = np.where(left, gb, gx)
        done[idx] |= gx == 0
    return np.where(np.abs(glo) <= np.abs(ghi), lo, hi)


def _solve_targets(kind: KeyKind, targets: np.ndarray, p: SemParams) -> np.ndarray:
    """Keys with ``q_kind(key) == target`` for targets strictly inside (0, 1)."""
    kind = KeyKind(kind)
    targets = np.asarray(targets, dtype=float)
    sign = 1.0 if kind is KeyKind.IG else -1.0

    def g(k, idx):
        return sign * (q_kind(kind, k, p) - targets[idx])

    n = targets.size
    every = np.arange(n)
    if kind is KeyKind.IG:
        lo = np.zeros(n)
        hi = np.full(n, 1e3 * p.x)
        for _ in range(60):
            short = g(hi, every) < 0
            if not short.any():
                break
            hi[short] *= 10.0
    else:
        lo = np.full(n, -1e3 * p.x)
        hi = np.full(n, -1e-9 * p.x)
        for _ in range(60):
            short = g(lo, every) > 0
            if not short.any():
                break
            lo[short] *= 10.0
        # targets below q(hi) sit against the domain boundary
        tiny = g(hi, every) < 0
        hi[tiny] = -1e-300
    return bracketed_root(g, lo, hi, atol=1e-300)


@functools.lru_cache(maxsize=64)
def key_cap(kind: KeyKind, p: SemParams) -> float:
    """Key value at which mortality reaches ``1 - 1e-12``."""
    return float(_solve_targets(kind, np.array([1.0 - CAP_MARGIN]), p)[0])


def boundary_key(kind: KeyKind, p: SemParams) -> float:
    """Key of zero mortality: ``Lambda = 0`` or ``M = -1e-8 x``."""
    return 0.0 if KeyKind(kind) is KeyKind.IG else -1e-8 * p.x


def invert_unconditional(kind: KeyKind, q, p: SemParams):
    """Solve ``q_kind(key) = q`` elementwise, with boundary and cap handling."""
    kind = KeyKind(kind)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    out = np.empty_like(q)
    zero = q <= 0
    capped = q >= 1.0 - CAP_MARGIN
    out[zero] = boundary_key(kind, p)
    out[capped] = key_cap(kind, p)
    mid = ~zero & ~capped
    if mid.any():
        out[mid] = _solve_targets(kind, q[mid], p)
    return out, capped


def anchor_key_at_S(cm: CohortMortality, kind: KeyKind, p: SemParams) -> float:
    """Key at the conditioning age from the unconditional data ``q(S)``.

    The conditional equation carries no information at ``t = S``, so the
    anchor solves ``q_kind(key) = q_data(S)`` instead.
    """
    if p.S > cm.w_avail:
        raise DataQualityError(f"cohort {cm.cohort}: no data at age {p.S}")
    q_s = float(cm.q_data[p.S])
    if q_s >= 1.0:
        raise DegenerateConditioningError(f"cohort {cm.cohort}: q({p.S}) = 1")
    keys, _ = invert_unconditional(kind, q_s, p)
    return float(keys[0])


def invert_pointwise(
    cond, key_S: float, kind: KeyKind, p: SemParams, cohort: int = 0, ages=None
) -> KeyPointEstimates:
    """Key values reproducing each conditional mortality value.

    ``cond`` holds ``q(t|S)`` for consecutive ages starting at ``S`` (or at
    ``ages`` if given); NaN entries are gaps. Values at or above the cap
    ``1 - 1e-12`` map to the cap key and are flagged.

    Raises
    ------
    DataQualityError
        If the observed values decrease by more than ``1e-9``.
    """
    kind = KeyKind(kind)
    cond = np.asarray(cond, dtype=float)
    ages = np.arange(p.S, p.S + cond.size) if ages is None else np.asarray(ages)
    gaps = np.isnan(cond)
    obs = np.nonzero(~gaps)[0]
    c_obs = cond[obs]
    if np.any((c_obs < 0) | (c_obs > 1)):
        raise DataQualityError(f"cohort {cohort}: conditional mortality outside [0, 1]")
    drops = np.nonzero(np.diff(c_obs) < -MONOTONE_TOL)[0]
    if drops.size:
        bad = ages[obs[drops + 1]].tolist()
        raise DataQualityError(f"cohort {cohort}: conditional mortality decreases at ages {bad}")

    q_s = float(q_kind(kind, key_S, p))
    targets = q_s + c_obs * (1.0 - q_s)
    values = np.full(cond.size, np.nan)
    capped = np.zeros(cond.size, dtype=bool)

    zero = c_obs <= 0
    top = (targets >= 1.0 - CAP_MARGIN) | (c_obs >= 1.0)
    mid = ~zero & ~top
    sol = np.empty(c_obs.size)
    sol[zero] = key_S
    sol[top] = key_cap(kind, p)
    if mid.any():
        sol[mid] = _solve_targets(kind, targets[mid], p)
    values[obs] = sol
    capped[obs] = top

    nonmono = []
    if kind is KeyKind.IG:
        v = values[obs]
        steps = np.diff(v) < -MONOTONE_TOL * np.maximum(1.0, np.abs(v[1:]))
        nonmono = ages[obs[1:][steps]].tolist()
    return KeyPointEstimates(cohort, kind, ages, values, key_S, capped, gaps, nonmono)


def invert_cohort(cm: CohortMortality, kind: KeyKind, p: SemParams, last_age=None):
    """Anchor plus pointwise inversion for one cohort over ages ``S..min(w_avail, w)``."""
    last = min(cm.w_avail, p.w) if last_age is None else min(last_age, cm.w_avail, p.w)
    trimmed = cm.truncated(last)
    key_S = anchor_key_at_S(trimmed, kind, p)
    cond = conditional_data(trimmed, p.S)
    return invert_pointwise(cond, key_S, kind, p, cohort=cm.cohort)


def invert_panel(panel: CohortPanel, kind: KeyKind, cohorts=None, workers: int = 1):
    cohorts = panel.cohorts if cohorts is None else list(cohorts)
    p = panel.params
    if workers <= 1:
        return [invert_cohort(panel[c], kind, p) for c in cohorts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: invert_cohort(panel[c], kind, p), cohorts))


def write_keys(path, estimates) -> None:
    rows = (
        (e.cohort, int(a), float(v))
        for e in estimates
        for a, v, gap in zip(e.ages, e.values, e.gaps)
        if not gap
    )
    write_tsv(path, KEY_DUMP_TAG, KEY_DUMP_COLUMNS, rows)
