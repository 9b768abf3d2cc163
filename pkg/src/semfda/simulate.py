"""Stochastic oracles for the closed-form mortality functions and synthetic panels.

Paths are simulated in fixed-size chunks, each with its own generator spawned
from one master seed. Results are reduced by summing counts, so the output
depends on the seed and path count only, never on the number of threads.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import KeyKind, SemParams, q_id, q_ig
from .errors import DomainError, SemError
from .hmd import CohortMortality, CohortPanel
from .tsv import write_tsv

log = logging.getLogger(__name__)

CHUNK = 1 << 16
SUMMARY_COLUMNS = ("kind", "age", "p_hat", "se", "q_closed_form")


@dataclass
class SimConfig:
    """Monte-Carlo settings shared by the simulators."""

    kind: KeyKind = KeyKind.IG
    p: SemParams = field(default_factory=SemParams)
    n_paths: int = 1_000_000
    time_step: float = 0.01
    rng_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.kind = KeyKind(self.kind)
        if self.n_paths < 1:
            raise SemError(f"n_paths must be >= 1, got {self.n_paths}")
        if not self.time_step > 0:
            raise SemError(f"time_step must be positive, got {self.time_step}")
        if self.workers < 1:
            raise SemError(f"workers must be >= 1, got {self.workers}")


@dataclass
class HittingEstimate:
    """Empirical ``P(tau <= t)`` with binomial standard errors."""

    ages: np.ndarray
    p_hat: np.ndarray
    se: np.ndarray
    n: int
    closed_form: np.ndarray | None = None

    def z_scores(self) -> np.ndarray:
        if self.closed_form is None:
            raise SemError("no closed form attached")
        # an SE of zero (p_hat in {0, 1}) is replaced by the 1/n resolution
        se = np.where(self.se > 0, self.se, 1.0 / self.n)
        return (self.p_hat - self.closed_form) / se


def _binomial_se(p_hat: np.ndarray, n: int) -> np.ndarray:
    return np.sqrt(p_hat * (1.0 - p_hat) / n)


def _chunked_counts(n: int, seed: int, workers: int, draw: Callable) -> np.ndarray:
    """Sum ``draw(rng, size)`` over fixed chunks with spawned sub-streams."""
    sizes = [CHUNK] * (n // CHUNK) + ([n % CHUNK] if n % CHUNK else [])
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(seqs, sizes))

    def run(job):
        seq, size = job
        return draw(np.random.default_rng(seq), size)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    return np.sum(parts, axis=0)


def ig_sample(rng: np.random.Generator, mean, shape, size) -> np.ndarray:
    """Inverse-Gaussian draws (transformation with rejection, as in numpy's ``wald``)."""
    return rng.wald(mean, shape, size)


# diffusion model -------------------------------------------------------------


def id_closed_form(x: float, mu: float, v: float, ages) -> np.ndarray:
    """First-passage CDF of ``x + mu t + v W_t`` through zero, via ``q_id``.

    The integrated drift is ``M = mu t`` and ``kappa = 2 mu / v^2``.
    """
    ages = np.asarray(ages, dtype=float)
    p = SemParams(x=x, kappa=2.0 * mu / v**2)
    out = np.zeros_like(ages)
    pos = ages > 0
    out[pos] = q_id(mu * ages[pos], p)
    return out


def simulate_id_hitting(
    x: float,
    mu,
    v,
    ages,
    n_paths: int = 1_000_000,
    seed: int = 0,
    mode: str = "exact",
    time_step: float = 0.01,
    workers: int = 1,
) -> HittingEstimate:
    """Empirical first-passage CDF of the energy process started at ``x``.

    ``mode="exact"`` needs constant ``mu < 0`` and ``v > 0`` and samples the
    passage time from its inverse-Gaussian law (mean ``x/|mu|``, shape
    ``x^2/v^2``). ``mode="euler"`` accepts callables ``mu(t)``, ``v(t)`` and
    uses an Euler scheme with a Brownian-bridge crossing correction.
    """
    ages = np.atleast_1d(np.asarray(ages, dtype=float))
    if not x > 0:
        raise DomainError(f"x must be positive, got {x}")
    if np.any(ages < 0):
        raise SemError("ages must be nonnegative")
    closed = None
    if mode == "exact":
        if callable(mu) or callable(v):
            raise SemError("exact mode needs constant coefficients")
        if not mu < 0:
            raise DomainError(f"drift must be negative in exact mode (kappa < 0), got {mu}")
        if not v > 0:
            raise DomainError(f"volatility must be positive, got {v}")
        mean, shape = x / abs(mu), (x / v) ** 2

        def draw(rng, size):
            tau = ig_sample(rng, mean, shape, size)
            return np.array([np.count_nonzero(tau <= t) for t in ages])

        closed = id_closed_form(x, mu, v, ages)
    elif mode == "euler":
        mu_f = mu if callable(mu) else (lambda t, c=float(mu): c)
        v_f = v if callable(v) else (lambda t, c=float(v): c)
        if not callable(v) and not v > 0:
            raise DomainError(f"volatility must be positive, got {v}")

        def draw(rng, size):
            return _euler_counts(rng, size, x, mu_f, v_f, ages, time_step)

        if not callable(mu) and not callable(v):
            closed = id_closed_form(x, mu, v, ages) if mu < 0 else None
    else:
        raise SemError(f"unknown mode {mode!r}")
    counts = _chunked_counts(n_paths, seed, workers, draw)
    p_hat = counts / n_paths
    return HittingEstimate(ages, p_hat, _binomial_se(p_hat, n_paths), n_paths, closed)


def _euler_counts(rng, size, x, mu_f, v_f, ages, h):
    t_end = float(ages.max())
    n_steps = int(math.ceil(t_end / h - 1e-9))
    pos = np.full(size, float(x))
    alive = np.ones(size, dtype=bool)
    hit_time = np.full(size, np.inf)
    t = 0.0
    for _ in range(n_steps):
        dt = min(h, t_end - t)
        if dt <= 0:
            break
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        vol = float(v_f(t))
        if not vol > 0:
            raise DomainError(f"volatility must be positive, got {vol} at t={t}")
        old = pos[idx]
        new = old + float(mu_f(t)) * dt + vol * math.sqrt(dt) * rng.standard_normal(idx.size)
        crossed = new <= 0
        # a path that stays positive at both ends still crossed with the bridge probability
        safe = ~crossed
        bridge = np.exp(-2.0 * old[safe] * new[safe] / (vol * vol * dt))
        crossed[safe] = rng.random(int(safe.sum())) < bridge
        hits = idx[crossed]
        hit_time[hits] = t + dt
        alive[hits] = False
        pos[idx] = new
        t += dt
    return np.array([np.count_nonzero(hit_time <= a + 1e-9) for a in ages])


# inverse-Gaussian model ------------------------------------------------------


def simulate_ig(lam_values, p: SemParams, n_paths: int = 1_000_000, seed: int = 0, workers: int = 1):
    """Empirical ``P(Y_t >= x)`` with ``Y_t`` inverse Gaussian, mean ``Lambda(t)``, shape ``sigma Lambda(t)^2``.

    Since ``Y`` is increasing, ``{tau <= t} = {Y_t >= x}``. A zero key gives
    probability 0 without sampling.
    """
    lam = np.atleast_1d(np.asarray(lam_values, dtype=float))
    if np.any(lam < 0):
        raise DomainError("Lambda must be nonnegative")
    pos = lam > 0

    def draw(rng, size):
        out = np.zeros(lam.size, dtype=np.int64)
        for i in np.nonzero(pos)[0]:
            y = ig_sample(rng, lam[i], p.sigma * lam[i] ** 2, size)
            out[i] = np.count_nonzero(y >= p.x)
        return out

    counts = _chunked_counts(n_paths, seed, workers, draw)
    p_hat = counts / n_paths
    return HittingEstimate(lam, p_hat, _binomial_se(p_hat, n_paths), n_paths, q_ig(lam, p))


def ig_process_samples(lam_s: float, lam_t: float, p: SemParams, n: int, seed: int = 0):
    """Two samples of ``Y_t``: built from independent increments, and drawn directly.

    The increment over ``[s, t]`` is inverse Gaussian with mean ``dL`` and
    shape ``sigma dL^2``, ``dL = Lambda(t) - Lambda(s)``.
    """
    if not 0 < lam_s < lam_t:
        raise SemError("need 0 < Lambda(s) < Lambda(t)")
    rng_a, rng_b, rng_c = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    d = lam_t - lam_s
    summed = ig_sample(rng_a, lam_s, p.sigma * lam_s**2, n) + ig_sample(rng_b, d, p.sigma * d**2, n)
    direct = ig_sample(rng_c, lam_t, p.sigma * lam_t**2, n)
    return summed, direct


# synthetic panels ------------------------------------------------------------


def ig_family_key(a: float, b: float, ages) -> np.ndarray:
    """``Lambda(t) = exp(a t) + b t - 1``; nonnegative and increasing for ``a, b >= 0``."""
    if a < 0 or b < 0:
        raise DomainError(f"IG family needs a >= 0 and b >= 0, got a={a}, b={b}")
    t = np.asarray(ages, dtype=float)
    return np.expm1(a * t) + b * t


def id_family_key(alpha: float, beta: float, gamma: float, T: float, ages) -> np.ndarray:
    """Integrated drift of ``U(t) = alpha + beta exp(gamma (t - T)) 1{t >= T}``.

    ``M(t) = alpha t + (beta / gamma)(exp(gamma (t - T)) - 1) 1{t >= T}``; strictly
    negative for ``t > 0`` when ``alpha < 0``, ``beta <= 0`` and ``gamma > 0``.
    """
    if not alpha < 0 or beta > 0 or not gamma > 0:
        raise DomainError(
            f"ID family needs alpha < 0, beta <= 0, gamma > 0; got {alpha}, {beta}, {gamma}"
        )
    t = np.asarray(ages, dtype=float)
    jump = np.where(t >= T, np.expm1(gamma * np.maximum(t - T, 0.0)) * beta / gamma, 0.0)
    return alpha * t + jump


def _family_mortality(kind: KeyKind, params, p: SemParams) -> np.ndarray:
    ages = np.arange(p.w + 1)
    q = np.zeros(ages.size)
    if kind is KeyKind.IG:
        q[1:] = q_ig(ig_family_key(*params, ages[1:]), p)
    else:
        q[1:] = q_id(id_family_key(*params, ages[1:]), p)
    return np.maximum.accumulate(q)


def binomial_lifetable(q: np.ndarray, cohort_size: int, rng: np.random.Generator) -> np.ndarray:
    """Empirical cumulative mortality of ``cohort_size`` individuals with true CDF ``q``."""
    alive = cohort_size
    out = np.zeros_like(q)
    for t in range(1, q.size):
        surv_prev = 1.0 - q[t - 1]
        hazard = 0.0 if surv_prev <= 0 else min(1.0, max(0.0, (q[t] - q[t - 1]) / surv_prev))
        alive -= rng.binomial(alive, hazard)
        out[t] = 1.0 - alive / cohort_size
    return out


def generate_synthetic_panel(
    kind,
    family_params: dict,
    p: SemParams,
    cohort_size: int | None = None,
    seed: int = 0,
) -> CohortPanel:
    """Cohort panel from the parametric key families.

    Parameters
    ----------
    family_params : dict
        ``cohort -> (a, b)`` for the IG family or ``cohort -> (alpha, beta, gamma, T)``
        for the ID family.
    cohort_size : int, optional
        When given, each curve is replaced by a binomial life table of this size.
    """
    kind = KeyKind(kind)
    cohorts = sorted(family_params)
    seqs = np.random.SeedSequence(seed).spawn(len(cohorts))
    curves = {}
    for c, seq in zip(cohorts, seqs):
        q = _family_mortality(kind, family_params[c], p)
        if cohort_size is not None:
            if cohort_size < 1:
                raise SemError(f"cohort_size must be >= 1, got {cohort_size}")
            q = binomial_lifetable(q, int(cohort_size), np.random.default_rng(seq))
        curves[c] = CohortMortality(c, q)
    return CohortPanel(curves, p)


def drifting_ig_params(cohorts, a0=0.062, a_slope=0.00008, b0=1.0, b_slope=0.01, wiggle=0.0, seed=0):
    """Smoothly drifting IG family parameters, with optional smooth cohort-level wiggle."""
    cohorts = list(cohorts)
    i = np.arange(len(cohorts), dtype=float)
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * np.pi, 2)
    a = a0 + a_slope * i + wiggle * 4e-4 * np.sin(0.4 * i + phase[0])
    b = b0 + b_slope * i + wiggle * 0.1 * np.sin(0.3 * i + phase[1])
    return {c: (float(ai), float(bi)) for c, ai, bi in zip(cohorts, a, b)}


def random_key_curves(kind, n: int, p: SemParams, rng: np.random.Generator, min_survival: float = 1e-8):
    """``n`` random admissible key curves on ages ``S..w`` with ``1 - q`` above ``min_survival``.

    IG curves are ``exp(a t) + b t``; ID curves are ``-A - B ((t - S)/(w - S))^g``.
    Curves whose mortality comes closer to 1 than ``min_survival`` are redrawn,
    because the key is numerically unidentifiable there.
    """
    kind = KeyKind(kind)
    ages = np.arange(p.S, p.w + 1, dtype=float)
    out = []
    while len(out) < n:
        if kind is KeyKind.IG:
            key = np.exp(rng.uniform(0.05, 0.08) * ages) + rng.uniform(0.0, 3.0) * ages
            q_end = q_ig(key[-1], p)
        else:
            s = (ages - p.S) / (p.w - p.S)
            key = -rng.uniform(700, 1000) - rng.uniform(400, 900) * s ** rng.uniform(1.1, 1.6)
            q_end = q_id(key[-1], p)
        if 1.0 - q_end >= min_survival:
            out.append(key)
    return ages, np.array(out)


def legendre_modes(S: float, w: float, degrees=(1, 2, 3)):
    """L2-orthonormal shifted Legendre polynomials on ``[S, w]`` as callables."""
    span = w - S

    def mode(n):
        coef = np.zeros(n + 1)
        coef[n] = 1.0
        scale = np.sqrt((2 * n + 1) / span)
        return lambda t: scale * np.polynomial.legendre.legval(2 * (np.asarray(t) - S) / span - 1, coef)

    return [mode(n) for n in degrees]


def planted_mode_panel(m=200, variances=(4.0, 1.0, 0.25), seed=7, L=20, S=20, w=110, exact=False):
    """Functional data set whose curves are ``mean + sum_j z_j e_j`` with known modes.

    The modes are orthonormal Legendre polynomials and ``z_j`` has variance
    ``variances[j]``. With ``exact=True`` the scores are centered and whitened
    so their sample covariance equals ``diag(variances)`` exactly.

    Returns
    -------
    fds : FunctionalDataSet
    modes : list of callables
    mode_coeffs : ndarray, L x len(variances)
    z : ndarray, m x len(variances)
    """
    from .basis import center, fit_coeffs, make_basis

    rng = np.random.default_rng(seed)
    basis = make_basis(S, w, L, 4)
    modes = legendre_modes(S, w, degrees=tuple(range(1, len(variances) + 1)))
    ages = np.arange(S, w + 1).astype(float)
    mean = 0.01 * (ages - S) ** 2 - 5.0
    z = rng.normal(size=(m, len(variances)))
    if exact:
        z -= z.mean(axis=0)
        q, _ = np.linalg.qr(z)
        z = q * np.sqrt(m - 1)
    z = z * np.sqrt(variances)
    curves = mean + z @ np.array([f(ages) for f in modes])
    coeffs = np.array([fit_coeffs(ages, y, basis)[0] for y in curves])
    mode_coeffs = np.array([fit_coeffs(ages, f(ages), basis)[0] for f in modes]).T
    return center(coeffs, basis, list(range(1800, 1800 + m))), modes, mode_coeffs, z


def write_summary(path, kind, est: HittingEstimate) -> None:
    closed = est.closed_form if est.closed_form is not None else np.full(est.ages.size, np.nan)
    rows = (
        (KeyKind(kind).value, float(a), float(ph), float(se), float(q))
        for a, ph, se, q in zip(est.ages, est.p_hat, est.se, closed)
    )
    write_tsv(path, "mc-summary", SUMMARY_COLUMNS, rows)
