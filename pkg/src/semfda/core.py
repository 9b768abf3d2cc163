"""Model constants, stable normal-distribution helpers and the closed-form
mortality functions of the diffusion (ID) and inverse-Gaussian (IG) survival
energy models."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import special

from .errors import DegenerateConditioningError, DomainError, MonotonicityError

_SQRT2 = math.sqrt(2.0)
_LOG_HALF = math.log(0.5)


class KeyKind(str, enum.Enum):
    """Which survival energy model a key function belongs to.

    ID keys are the integrated drift ``M(t) < 0``; IG keys are the
    inverse-Gaussian mean function ``Lambda(t) >= 0``.
    """

    ID = "ID"
    IG = "IG"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class SemParams:
    """Fixed model constants plus the conditioning and terminal ages."""

    x: float = 1000.0
    kappa: float = -0.25
    sigma: float = 0.001
    cond_age: int = 20
    terminal_age: int = 110

    def __post_init__(self):
        if not self.x > 0:
            raise DomainError(f"initial energy x must be positive, got {self.x}")
        if not self.kappa < 0:
            raise DomainError(f"kappa must be negative, got {self.kappa}")
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if not self.cond_age < self.terminal_age:
            raise DomainError(
                f"cond_age ({self.cond_age}) must be below terminal_age ({self.terminal_age})"
            )

    @property
    def S(self) -> int:
        return self.cond_age

    @property
    def w(self) -> int:
        return self.terminal_age

    def to_dict(self) -> dict:
        return asdict(self)


def norm_cdf(z):
    """Standard normal distribution function via the complementary error function."""
    return 0.5 * special.erfc(-np.asarray(z, dtype=float) / _SQRT2)


def log_norm_cdf(z):
    """``log(Phi(z))`` that stays finite and accurate far into the lower tail.

    For ``z < -8`` the scaled complementary error function is used, i.e.
    ``log Phi(z) = log(erfcx(t) / 2) - t**2`` with ``t = -z / sqrt(2)``, so that
    ``exp(a + log_norm_cdf(z))`` is representable whenever the product is.
    """
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        upper = np.log1p(-0.5 * special.erfc(np.maximum(z, 0.0) / _SQRT2))
        middle = np.log(0.5 * special.erfc(-np.clip(z, -8.0, 0.0) / _SQRT2))
        t = -np.minimum(z, -8.0) / _SQRT2
        lower = _LOG_HALF + np.log(special.erfcx(t)) - t * t
    out = np.where(z > 0.0, upper, np.where(z < -8.0, lower, middle))
    return out[()] if out.ndim == 0 else out


def _as_array(v):
    a = np.asarray(v, dtype=float)
    if np.any(np.isnan(a)):
        raise DomainError("key value is NaN")
    return a


def q_id(key_m, p: SemParams):
    """Mortality of the diffusion model as a function of the integrated drift.

    ``key_m`` must be strictly negative; the dispersion integral is recovered
    from the fixed drift/dispersion ratio ``kappa``. The exponentially large
    factor ``exp(-kappa x)`` is combined with its normal tail in log space.
    """
    m = _as_array(key_m)
    if np.any(m >= 0):
        raise DomainError("ID key M must be strictly negative")
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        s = np.sqrt(2.0 * (m / p.kappa))
        first = norm_cdf(-(p.x + m) / s)
        second = np.exp(-p.kappa * p.x + log_norm_cdf((m - p.x) / s))
    out = np.clip(first + second, 0.0, 1.0)
    return out[()] if out.ndim == 0 else out


def q_ig(key_l, p: SemParams):
    """Mortality of the inverse-Gaussian model as a function of ``Lambda(t) >= 0``.

    Equals the survival function of an inverse-Gaussian law with mean
    ``Lambda`` and shape ``sigma * Lambda**2`` evaluated at ``x``.
    """
    lam = _as_array(key_l)
    if np.any(lam < 0):
        raise DomainError("IG key Lambda must be nonnegative")
    r = math.sqrt(p.sigma / p.x)
    with np.errstate(over="ignore"):
        first = norm_cdf(r * (lam - p.x))
        second = np.exp(2.0 * p.sigma * lam + log_norm_cdf(-r * (lam + p.x)))
    out = np.clip(first - second, 0.0, 1.0)
    return out[()] if out.ndim == 0 else out


def q_kind(kind: KeyKind, key, p: SemParams):
    """Dispatch to :func:`q_id` or :func:`q_ig`."""
    if KeyKind(kind) is KeyKind.ID:
        return q_id(key, p)
    return q_ig(key, p)


def conditional(q_t, q_s):
    """Probability of death by ``t`` given survival to the conditioning age.

    Raises
    ------
    DegenerateConditioningError
        If ``q_s >= 1``.
    MonotonicityError
        If ``q_t < q_s``.
    """
    q_t = np.asarray(q_t, dtype=float)
    q_s = np.asarray(q_s, dtype=float)
    if np.any(q_s >= 1.0):
        raise DegenerateConditioningError("mortality at the conditioning age is 1")
    if np.any(q_t < q_s):
        raise MonotonicityError("q(t) < q(S): mortality must be nondecreasing")
    out = np.clip((q_t - q_s) / (1.0 - q_s), 0.0, 1.0)
    return out[()] if out.ndim == 0 else out


def admissible_clamp(kind: KeyKind, key, p: SemParams):
    """Clamp key values onto the admissible domain.

    Returns the clamped array and a boolean mask of entries that moved.
    ID keys are pushed to ``-1e-8 * x`` at most, IG keys to ``0`` at least.
    """
    key = np.asarray(key, dtype=float)
    if KeyKind(kind) is KeyKind.ID:
        bound = -1e-8 * p.x
        moved = key > bound
        return np.where(moved, bound, key), moved
    moved = key < 0
    return np.where(moved, 0.0, key), moved
