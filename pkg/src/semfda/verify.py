"""Oracle suite run by ``sem verify``.

Each oracle compares a package computation with an independent reference
(scipy distributions, Monte-Carlo simulation, grid discretisation or textbook
recursions) and reports the measured error against its tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .arima import ArimaSpec, forecast
from .core import KeyKind, SemParams, conditional, q_ig, q_kind
from .fpca import fit_fpca
from .inversion import invert_pointwise
from .simulate import ig_family_key, planted_mode_panel, random_key_curves, simulate_id_hitting, simulate_ig
from .tsv import write_tsv

VERIFY_COLUMNS = ("oracle", "passed", "measured", "tolerance", "detail")

# (x, mu, v, t) configurations for the first-passage oracle
ID_CONFIGS = (
    (1.0, -0.2, 1.0, 5.0),
    (1.0, -0.5, 0.7, 1.0),
    (2.0, -0.3, 1.0, 4.0),
    (0.5, -0.1, 0.5, 2.0),
    (3.0, -1.0, 1.5, 2.5),
    (1.5, -0.05, 0.3, 10.0),
    (5.0, -0.8, 2.0, 6.0),
    (0.2, -0.4, 0.4, 0.5),
    (10.0, -0.25, 1.0, 40.0),
    (1000.0, -0.25, 1.0 / np.sqrt(2.0), 3600.0),
)
# ages at which the IG simulator is compared, on the key exp(0.065 t) + 1.5 t - 1
IG_AGES = (80.0, 90.0, 100.0, 105.0, 110.0)
IG_FAMILY = (0.065, 1.5)


@dataclass
class OracleResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}  {self.name:<22} measured={self.measured:.3e}  "
            f"tolerance={self.tolerance:.3e}  {self.seconds:.2f}s  {self.detail}"
        )


def ig_reference_survival(lam, x, sigma) -> np.ndarray:
    """``P(Y >= x)`` for ``Y`` inverse Gaussian with mean ``lam`` and shape ``sigma lam^2`` (scipy)."""
    lam = np.asarray(lam, dtype=float)
    out = np.zeros(np.broadcast(lam, x, sigma).shape)
    lam, x, sigma = np.broadcast_arrays(lam, x, sigma)
    pos = lam > 0
    shape = sigma[pos] * lam[pos] ** 2
    out[pos] = stats.invgauss.sf(x[pos], mu=lam[pos] / shape, scale=shape)
    return out


def oracle_ig_identity(seed: int, n: int = 1000, q_func: Callable | None = None) -> OracleResult:
    """``q_ig`` against the inverse-Gaussian survival function on random triples."""
    q_func = q_ig if q_func is None else q_func
    rng = np.random.default_rng(seed)
    x = rng.uniform(1.0, 1e4, n)
    lam = rng.uniform(0.0, 5.0, n) * x
    sigma = rng.uniform(1e-4, 1e-2, n)
    t0 = time.perf_counter()
    got = np.array([float(q_func(l, SemParams(x=xx, sigma=s))) for l, xx, s in zip(lam, x, sigma)])
    err = float(np.max(np.abs(got - ig_reference_survival(lam, x, sigma))))
    return OracleResult("ig_identity", err < 1e-10, err, 1e-10, time.perf_counter() - t0, f"{n} triples")


def oracle_id_first_passage(seed: int, n_paths: int, workers: int = 1) -> OracleResult:
    """Exact-sampler Monte Carlo of Brownian first passage against ``q_id``."""
    t0 = time.perf_counter()
    seqs = np.random.SeedSequence(seed).spawn(len(ID_CONFIGS))
    z = []
    for (x, mu, v, t), seq in zip(ID_CONFIGS, seqs):
        est = simulate_id_hitting(x, mu, v, [t], n_paths, int(seq.generate_state(1)[0]), workers=workers)
        z.append(abs(float(est.z_scores()[0])))
    inside = sum(zi < 3 for zi in z)
    return OracleResult(
        "id_first_passage",
        inside >= 9,
        max(z),
        3.0,
        time.perf_counter() - t0,
        f"{inside}/{len(z)} within 3 SE, n={n_paths}",
    )


def oracle_ig_simulation(seed: int, n_paths: int, p: SemParams | None = None, workers: int = 1) -> OracleResult:
    """Direct inverse-Gaussian draws at five ages against ``q_ig``."""
    p = SemParams() if p is None else p
    t0 = time.perf_counter()
    lam = ig_family_key(*IG_FAMILY, np.array(IG_AGES))
    est = simulate_ig(lam, p, n_paths, seed, workers)
    z = np.abs(est.z_scores())
    return OracleResult(
        "ig_simulation",
        bool(np.all(z < 3)),
        float(z.max()),
        3.0,
        time.perf_counter() - t0,
        f"ages {list(IG_AGES)}, n={n_paths}, max SE {est.se.max():.2e}",
    )


def oracle_fpca_grid(seed: int) -> OracleResult:
    """Basis-space eigenvalues against a 0.25-year grid discretisation of the covariance."""
    t0 = time.perf_counter()
    fds, _, _, _ = planted_mode_panel(m=200, seed=seed)
    model = fit_fpca(fds, theta=0.995)
    grid = np.arange(fds.basis.S, fds.basis.w + 0.125, 0.25)
    weights = np.full(grid.size, 0.25)
    weights[[0, -1]] = 0.125
    X = fds.centered @ fds.basis.design(grid).T
    cov = X.T @ X / (fds.m - 1)
    sw = np.sqrt(weights)
    grid_vals = np.sort(np.linalg.eigvalsh(sw[:, None] * cov * sw[None, :]))[::-1][:3]
    rel = float(np.max(np.abs(model.eigvals[:3] - grid_vals) / grid_vals))
    B = model.eig_coeffs
    ortho = float(np.max(np.abs(B.T @ fds.basis.gram @ B - np.eye(B.shape[1]))))
    ok = rel < 5e-3 and ortho < 1e-8
    return OracleResult(
        "fpca_grid", ok, rel, 5e-3, time.perf_counter() - t0, f"orthonormality error {ortho:.1e}"
    )


def oracle_arima_closed_forms() -> OracleResult:
    """Forecast recursion against AR(1), MA(1) and random-walk closed forms."""
    t0 = time.perf_counter()
    series = np.array([0.3, -0.2, 0.8, 1.1, 0.4, -0.5, 0.2, 0.9, 1.3, 0.7, 0.1, -0.4])
    h = np.arange(1, 21)
    errs = []
    # AR(1) around a mean
    phi, mean, s2 = 0.7, 0.25, 0.4
    spec = ArimaSpec(1, 0, 0, np.array([phi]), np.zeros(0), mean, s2, 0.0)  # intercept is the mean
    fc = forecast(spec, series, 20)
    errs.append(np.max(np.abs(fc.points - (mean + phi**h * (series[-1] - mean)))))
    var = s2 * (1 - phi ** (2 * h)) / (1 - phi**2)
    half = stats.norm.ppf(0.975) * np.sqrt(var)
    errs.append(np.max(np.abs(fc.intervals[0.95][1] - fc.points - half)))
    # random walk with drift
    spec = ArimaSpec(0, 1, 0, np.zeros(0), np.zeros(0), 0.1, s2, 0.0)
    fc = forecast(spec, series, 20)
    errs.append(np.max(np.abs(fc.points - (series[-1] + 0.1 * h))))
    errs.append(np.max(np.abs(fc.spec.psi_weights(20) - 1.0)))
    # MA(1): residual recursion then one nonzero step
    th = 0.4
    spec = ArimaSpec(0, 0, 1, np.zeros(0), np.array([th]), mean, s2, 0.0)
    fc = forecast(spec, series, 5)
    e = 0.0
    for y in series:
        e = y - mean - th * e
    errs.append(abs(fc.points[0] - (mean + th * e)))
    errs.append(np.max(np.abs(fc.points[1:] - mean)))
    err = float(max(errs))
    return OracleResult("arima_closed_forms", err < 1e-10, err, 1e-10, time.perf_counter() - t0, "AR(1), MA(1), RW")


def oracle_inversion_round_trip(seed: int, p: SemParams | None = None) -> OracleResult:
    """Forward-generate conditional mortality from random key curves, invert, and compare."""
    p = SemParams() if p is None else p
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    dq, dk = 0.0, 0.0
    for kind in (KeyKind.ID, KeyKind.IG):
        for key in random_key_curves(kind, 20, p, rng)[1]:
            q = q_kind(kind, key, p)
            cond = conditional(q, q[0])
            est = invert_pointwise(cond, key[0], kind, p)
            ok = ~est.capped
            back = conditional(q_kind(kind, est.values, p), q_kind(kind, key[0], p))
            dq = max(dq, float(np.max(np.abs(back[ok] - cond[ok]))))
            dk = max(dk, float(np.max(np.abs(est.values[ok] - key[ok]) / np.abs(key[ok]))))
    ok = dq < 1e-10 and dk < 1e-7
    return OracleResult(
        "inversion_round_trip", ok, dk, 1e-7, time.perf_counter() - t0, f"max |dq| {dq:.1e}, 20 curves per kind"
    )


def run_oracles(seed: int, n_paths: int, workers: int = 1, fault: str = "none", p: SemParams | None = None):
    """Run the full suite; ``fault="q_ig_sign"`` flips a sign inside ``q_ig`` to test detection."""
    q_func = None
    if fault == "q_ig_sign":
        q_func = _q_ig_sign_flipped
    seqs = np.random.SeedSequence(seed).spawn(5)
    s = [int(q.generate_state(1)[0]) for q in seqs]
    return [
        oracle_ig_identity(s[0], q_func=q_func),
        oracle_id_first_passage(s[1], n_paths, workers),
        oracle_ig_simulation(s[2], n_paths, p, workers),
        oracle_fpca_grid(s[3]),
        oracle_arima_closed_forms(),
        oracle_inversion_round_trip(s[4], p),
    ]


def _q_ig_sign_flipped(lam, p: SemParams):
    """``q_ig`` with the sign of its second term flipped (fault injection)."""
    lam = np.asarray(lam, dtype=float)
    r = np.sqrt(p.sigma / p.x)
    return stats.norm.cdf(r * (lam - p.x)) + np.exp(2 * p.sigma * lam + stats.norm.logcdf(-r * (lam + p.x)))


def write_report(path, results) -> None:
    rows = (
        (r.name, int(r.passed), float(r.measured), float(r.tolerance), r.detail)
        for r in results
    )
    write_tsv(path, "verify", VERIFY_COLUMNS, rows)
