import numpy as np
import pytest
from scipy import stats
from scipy.integrate import cumulative_trapezoid

from semfda.basis import fit_panel, make_basis
from semfda.core import KeyKind, SemParams, q_ig
from semfda.errors import DomainError, SemError
from semfda.fpca import fit_fpca
from semfda.inversion import invert_panel
from semfda.simulate import (
    SUMMARY_COLUMNS,
    SimConfig,
    binomial_lifetable,
    drifting_ig_params,
    generate_synthetic_panel,
    id_closed_form,
    id_family_key,
    ig_family_key,
    ig_process_samples,
    ig_sample,
    simulate_id_hitting,
    simulate_ig,
    write_summary,
)
from semfda.tsv import read_tsv

P = SemParams()


class TestIdHitting:
    def test_example_configuration(self):
        est = simulate_id_hitting(1.0, -0.2, 1.0, [5.0], 10**6, seed=11)
        assert abs(est.z_scores()[0]) < 3
        assert est.closed_form[0] == pytest.approx(0.7768, abs=1e-4)

    def test_time_zero(self):
        est = simulate_id_hitting(1.0, -0.2, 1.0, [0.0, 1e-9], 10_000, seed=1)
        assert np.all(est.p_hat == 0.0)

    def test_se_halves_when_n_quadruples(self):
        a = simulate_id_hitting(2.0, -0.3, 1.0, [4.0], 100_000, seed=3)
        b = simulate_id_hitting(2.0, -0.3, 1.0, [4.0], 400_000, seed=4)
        assert b.se[0] / a.se[0] == pytest.approx(0.5, rel=0.05)

    def test_se_scaling_when_n_doubles(self):
        a = simulate_id_hitting(2.0, -0.3, 1.0, [4.0], 100_000, seed=3)
        b = simulate_id_hitting(2.0, -0.3, 1.0, [4.0], 200_000, seed=4)
        assert b.se[0] / a.se[0] == pytest.approx(1 / np.sqrt(2), rel=0.05)

    def test_seed_determinism_and_thread_independence(self):
        a = simulate_id_hitting(1.0, -0.5, 0.7, [1.0, 2.0], 200_000, seed=5, workers=1)
        b = simulate_id_hitting(1.0, -0.5, 0.7, [1.0, 2.0], 200_000, seed=5, workers=3)
        c = simulate_id_hitting(1.0, -0.5, 0.7, [1.0, 2.0], 200_000, seed=6)
        np.testing.assert_array_equal(a.p_hat, b.p_hat)
        assert not np.array_equal(a.p_hat, c.p_hat)

    def test_euler_agrees_with_exact(self):
        ages = [1.0, 3.0, 5.0]
        ex = simulate_id_hitting(1.0, -0.2, 1.0, ages, 200_000, seed=7)
        eu = simulate_id_hitting(1.0, -0.2, 1.0, ages, 100_000, seed=8, mode="euler", time_step=0.01)
        combined = np.sqrt(ex.se**2 + eu.se**2)
        assert np.all(np.abs(ex.p_hat - eu.p_hat) < 3 * combined)

    def test_euler_time_varying_matches_time_change(self):
        # drift and volatility proportional to g(t) = 1 + t/5 is a time change of
        # the constant process, so the closed form applies at the integrated clock
        g = lambda t: 1.0 + t / 5.0
        mu, v = -0.3, 0.8
        est = simulate_id_hitting(
            1.0, lambda t: mu * g(t), lambda t: v * np.sqrt(g(t)), [2.0], 100_000, seed=9,
            mode="euler", time_step=0.005,
        )
        clock = 2.0 + 2.0**2 / 10.0
        want = id_closed_form(1.0, mu, v, [clock])[0]
        assert abs(est.p_hat[0] - want) < 3 * est.se[0] + 2e-3

    def test_tiny_sample_widens_se(self):
        small = simulate_id_hitting(1.0, -0.2, 1.0, [5.0], 100, seed=1)
        big = simulate_id_hitting(1.0, -0.2, 1.0, [5.0], 100_000, seed=1)
        assert small.se[0] > 10 * big.se[0]
        assert abs(small.z_scores()[0]) < 4

    @pytest.mark.parametrize("mu,v", [(0.0, 1.0), (0.1, 1.0), (-0.1, 0.0)])
    def test_bad_coefficients(self, mu, v):
        with pytest.raises(DomainError):
            simulate_id_hitting(1.0, mu, v, [1.0], 10, seed=0)

    def test_unknown_mode(self):
        with pytest.raises(SemError):
            simulate_id_hitting(1.0, -0.1, 1.0, [1.0], 10, mode="milstein")


class TestIg:
    def test_zero_key(self):
        est = simulate_ig([0.0, 0.0], P, 1000, seed=1)
        assert np.all(est.p_hat == 0.0) and np.all(est.closed_form == 0.0)

    def test_key_900(self):
        est = simulate_ig([900.0], P, 10**6, seed=12)
        assert abs(est.z_scores()[0]) < 3

    def test_moments(self):
        rng = np.random.default_rng(13)
        lam = 900.0
        y = ig_sample(rng, lam, P.sigma * lam**2, 10**6)
        assert y.mean() == pytest.approx(lam, rel=0.01)
        assert y.var() == pytest.approx(lam / P.sigma, rel=0.01)

    def test_increment_additivity(self):
        summed, direct = ig_process_samples(400.0, 1100.0, P, 100_000, seed=14)
        ks = stats.ks_2samp(summed, direct)
        crit_1pct = 1.628 * np.sqrt(2 / 100_000)
        assert ks.statistic < crit_1pct

    def test_increment_requires_order(self):
        with pytest.raises(SemError):
            ig_process_samples(5.0, 5.0, P, 10)


class TestFamilies:
    def test_ig_family(self):
        t = np.array([0.0, 10.0])
        np.testing.assert_allclose(ig_family_key(0.05, 2.0, t), [0.0, np.e**0.5 - 1 + 20])
        with pytest.raises(DomainError):
            ig_family_key(-0.1, 1.0, t)

    def test_id_family_integrates_drift(self):
        alpha, beta, gamma, T = -8.0, -3.0, 0.08, 60.0
        # the drift jumps at T, so each side is integrated on its own grid
        t1, t2 = np.linspace(0, T, 1201), np.linspace(T, 110, 1001)
        u1 = np.full_like(t1, alpha)
        u2 = alpha + beta * np.exp(gamma * (t2 - T))
        trap1 = cumulative_trapezoid(u1, t1, initial=0.0)
        trap2 = trap1[-1] + cumulative_trapezoid(u2, t2, initial=0.0)
        m = id_family_key(alpha, beta, gamma, T, np.concatenate([t1, t2]))
        np.testing.assert_allclose(m, np.concatenate([trap1, trap2]), rtol=1e-5, atol=1e-9)
        assert np.all(np.diff(id_family_key(alpha, beta, gamma, T, np.arange(111))) < 0)

    def test_id_family_inadmissible(self):
        with pytest.raises(DomainError):
            id_family_key(1.0, -1.0, 0.1, 50.0, [1.0])


class TestSyntheticPanel:
    def test_zero_noise_matches_closed_form(self):
        params = drifting_ig_params(range(1800, 1805))
        panel = generate_synthetic_panel(KeyKind.IG, params, P)
        a, b = params[1802]
        lam = ig_family_key(a, b, np.arange(1, P.w + 1))
        np.testing.assert_allclose(panel[1802].q_data[1:], q_ig(lam, P), atol=0)

    def test_zero_noise_key_recovery(self):
        params = drifting_ig_params(range(1800, 1806))
        panel = generate_synthetic_panel(KeyKind.IG, params, P)
        est = invert_panel(panel, KeyKind.IG)
        for e in est:
            a, b = params[e.cohort]
            lam = ig_family_key(a, b, e.ages)
            ok = ~e.capped
            np.testing.assert_allclose(e.values[ok], lam[ok], rtol=1e-7)

    def test_binomial_bands(self):
        params = {1850: (0.065, 1.5)}
        exact = generate_synthetic_panel(KeyKind.IG, params, P)[1850].q_data
        noisy = generate_synthetic_panel(KeyKind.IG, params, P, cohort_size=10**5, seed=3)[1850].q_data
        se = np.sqrt(exact * (1 - exact) / 10**5)
        inside = np.abs(noisy - exact) <= 3 * se + 1e-12
        assert inside.mean() >= 0.97

    def test_noise_is_seeded(self):
        params = {1850: (0.065, 1.5)}
        a = generate_synthetic_panel(KeyKind.IG, params, P, cohort_size=1000, seed=3)
        b = generate_synthetic_panel(KeyKind.IG, params, P, cohort_size=1000, seed=3)
        np.testing.assert_array_equal(a[1850].q_data, b[1850].q_data)

    def test_id_panel(self):
        params = {c: (-9.0 - 0.01 * i, -2.0, 0.07, 60.0) for i, c in enumerate(range(1800, 1803))}
        panel = generate_synthetic_panel(KeyKind.ID, params, P)
        q = panel[1801].q_data
        assert q[0] == 0.0 and np.all(np.diff(q) >= 0) and q[-1] > 0.5

    def test_constant_parameters_give_null_fpca(self):
        params = {c: (0.065, 1.5) for c in range(1800, 1810)}
        panel = generate_synthetic_panel(KeyKind.IG, params, P)
        fds = fit_panel(invert_panel(panel, KeyKind.IG), make_basis(P.S, P.w))
        model = fit_fpca(fds)
        assert model.degenerate or model.eigvals[0] < 1e-12

    def test_binomial_lifetable_extremes(self, rng):
        q = np.array([0.0, 0.5, 1.0])
        out = binomial_lifetable(q, 50, rng)
        assert out[0] == 0.0 and out[-1] == 1.0


def test_sim_config_validation():
    with pytest.raises(SemError):
        SimConfig(n_paths=0)
    with pytest.raises(SemError):
        SimConfig(time_step=0.0)
    assert SimConfig(kind="ID").kind is KeyKind.ID


def test_summary_dump(tmp_path):
    est = simulate_ig([300.0, 900.0], P, 1000, seed=1)
    path = tmp_path / "mc.tsv"
    write_summary(path, "IG", est)
    rows = read_tsv(path, "mc-summary", SUMMARY_COLUMNS)
    assert [r[1] for r in rows] == ["300.0", "900.0"]
    assert float(rows[1][4]) == float(q_ig(900.0, P))
