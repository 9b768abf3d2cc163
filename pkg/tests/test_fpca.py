import numpy as np
import pytest

from synth import planted_panel
from semfda.basis import center, eval_curve, make_basis
from semfda.errors import ParseError, SemError
from semfda.fpca import fit_fpca, load_model, reconstruct, save_model, select_k


def simpson_weights(t):
    h = t[1] - t[0]
    w = np.full(t.size, 2.0)
    w[1::2] = 4.0
    w[[0, -1]] = 1.0
    return w * h / 3


@pytest.fixture(scope="module")
def planted():
    return planted_panel()


@pytest.fixture(scope="module")
def model(planted):
    fds = planted[0]
    return fit_fpca(fds, theta=0.995)


class TestInvariants:
    def test_orthonormal(self, model):
        B, W = model.eig_coeffs, model.basis.gram
        assert np.abs(B.T @ W @ B - np.eye(B.shape[1])).max() < 1e-8

    def test_eigvals_sorted_nonnegative(self, model):
        assert np.all(np.diff(model.eigvals) <= 0)
        assert np.all(model.eigvals >= -1e-12)

    def test_score_variance(self, model):
        m = model.scores.shape[0]
        var = (model.scores**2).sum(axis=0) / (m - 1)
        np.testing.assert_allclose(var, model.eigvals, rtol=1e-8)

    def test_sign_rule(self, model):
        B = model.eig_coeffs
        assert np.all(model.basis.integrals() @ B >= -1e-12 * np.abs(B).sum(axis=0))

    def test_scores_are_inner_products(self, planted, model):
        fds = planted[0]
        t = np.linspace(20, 110, 4001)
        wts = simpson_weights(t)
        ystar = eval_curve(fds.centered, model.basis, t)  # t x m
        e = model.eigenfunctions(t)
        direct = (ystar * wts[:, None]).T @ e
        np.testing.assert_allclose(direct[:, :3], model.scores[:, :3], atol=1e-8)


def _angles(mode_coeffs, model):
    W = model.basis.gram
    cosines = np.linalg.svd(mode_coeffs.T @ W @ model.eig_coeffs[:, :3], compute_uv=False)
    return np.degrees(np.arccos(np.clip(cosines, -1, 1)))


class TestPlanted:
    @pytest.mark.parametrize("seed", [7, 11, 2024])
    def test_eigenvalues_and_subspace(self, seed):
        fds, modes, mode_coeffs, z = planted_panel(seed=seed)
        model = fit_fpca(fds, 0.995)
        # sampling error of a variance estimate at m=200 is about 10%
        sample_var = np.sort(z.var(axis=0, ddof=1))[::-1]
        np.testing.assert_allclose(model.eigvals[:3], sample_var, rtol=0.15)
        assert np.all(np.abs(model.eigvals[:3] / [4.0, 1.0, 0.25] - 1) < 0.35)
        assert _angles(mode_coeffs, model).max() < 5.0
        assert model.K_selected == 3

    def test_exact_planted_variances(self):
        fds, modes, mode_coeffs, z = planted_panel(exact=True)
        model = fit_fpca(fds, 0.995)
        np.testing.assert_allclose(model.eigvals[:3], [4.0, 1.0, 0.25], rtol=1e-8)
        assert _angles(mode_coeffs, model).max() < 1e-4

    def test_grid_oracle(self, planted, model):
        fds = planted[0]
        t = np.arange(20, 110 + 1e-9, 0.25)
        Y = eval_curve(fds.centered, model.basis, t).T  # m x grid
        K = Y.T @ Y / (Y.shape[0] - 1)
        d = np.full(t.size, 0.25)
        d[[0, -1]] *= 0.5
        sq = np.sqrt(d)
        grid_vals = np.linalg.eigvalsh(sq[:, None] * K * sq[None, :])[::-1][:3]
        np.testing.assert_allclose(model.eigvals[:3], grid_vals, rtol=0.005)


class TestEdgeCases:
    def test_identical_cohorts(self):
        basis = make_basis(20, 110, 10, 4)
        fds = center(np.tile(np.arange(10.0), (5, 1)), basis)
        model = fit_fpca(fds, 0.995)
        assert model.degenerate
        assert np.all(model.eigvals == 0)
        assert model.K_selected == 1
        assert np.all(model.scores == 0)

    def test_two_cohorts(self, rng):
        basis = make_basis(20, 110, 10, 4)
        f = rng.normal(size=10)
        fds = center(np.array([f, -f]), basis)
        model = fit_fpca(fds, 0.995)
        assert model.rank == 1
        t = np.linspace(20, 110, 4001)
        wts = simpson_weights(t)
        fv = eval_curve(f, basis, t)
        e1 = model.eigenfunctions(t)[:, 0]
        direct = sum((s * fv * e1 * wts).sum() ** 2 for s in (1, -1)) / (2 - 1)
        assert model.eigvals[0] == pytest.approx(direct, rel=1e-8)
        assert model.eigvals[0] == pytest.approx(2 * (fv**2 * wts).sum(), rel=1e-8)

    def test_needs_two(self):
        basis = make_basis(20, 110, 10, 4)
        fds = center(np.ones((2, 10)), basis)
        fds.centered = fds.centered[:1]
        with pytest.raises(SemError):
            fit_fpca(fds)


class TestSelectK:
    @pytest.mark.parametrize(
        "lam,theta,k", [((1, 0, 0), 0.995, 1), ((0.7, 0.2, 0.1), 0.9, 2), ((0.7, 0.2, 0.1), 1.0, 3)]
    )
    def test_examples(self, lam, theta, k):
        assert select_k(lam, theta) == k

    def test_all_zero(self):
        assert select_k([0.0, 0.0], 0.9) == 1

    def test_bad_theta(self):
        with pytest.raises(SemError):
            select_k([1.0], 0.0)

    def test_theta_one_gives_rank(self, planted):
        model = fit_fpca(planted[0], theta=1.0)
        assert model.K_selected == model.rank


class TestReconstruct:
    def test_zero_scores_gives_mean(self, model):
        t = np.linspace(20, 110, 11)
        np.testing.assert_allclose(
            reconstruct(model, np.zeros(3), t), eval_curve(model.mean_coeffs, model.basis, t)
        )

    def test_full_rank_identity(self, rng):
        basis = make_basis(20, 110, 12, 4)
        fds = center(rng.normal(size=(30, 12)) * 50, basis)
        model = fit_fpca(fds, 0.995)
        assert model.rank == 12
        t = np.linspace(20, 110, 500)
        for i in range(30):
            got = reconstruct(model, model.scores[i], t)
            want = eval_curve(fds.coeffs[i], basis, t)
            assert np.max(np.abs(got - want)) < 1e-8

    def test_truncated_residual_bookkeeping(self, rng):
        basis = make_basis(20, 110, 12, 4)
        fds = center(rng.normal(size=(30, 12)) * np.linspace(10, 0.1, 12), basis)
        model = fit_fpca(fds, 0.995)
        K = model.K_selected
        assert K < model.rank
        W = basis.gram
        resid = 0.0
        total = 0.0
        for i in range(30):
            r = fds.coeffs[i] - model.key_coeffs(model.scores[i, :K])
            resid += r @ W @ r
            total += fds.centered[i] @ W @ fds.centered[i]
        bound = total - 29 * model.eigvals[:K].sum()
        assert resid <= bound * (1 + 1e-9)
        assert resid == pytest.approx(29 * model.eigvals[K:].sum(), rel=1e-8)

    def test_domain(self, model):
        with pytest.raises(Exception):
            reconstruct(model, [0.0], 200.0)


def test_save_load_round_trip(tmp_path, model):
    path = tmp_path / "model.json"
    save_model(model, path)
    back = load_model(path)
    assert back.K_selected == model.K_selected
    np.testing.assert_array_equal(back.eig_coeffs, model.eig_coeffs)
    np.testing.assert_array_equal(back.scores, model.scores)
    np.testing.assert_array_equal(back.basis.gram, model.basis.gram)


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "other", "version": 1}')
    with pytest.raises(ParseError):
        load_model(path)
