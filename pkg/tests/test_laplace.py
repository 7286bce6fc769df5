import numpy as np
import pytest
from scipy.optimize import minimize_scalar
from scipy.special import log_ndtr
from scipy.stats import binom

from oracles import GaussianFamily, GaussianSeries, gauss_hermite_default_only
from transition_calib.domain import MigrationSeries, ModelParameters
from transition_calib.errors import NonConvergenceError
from transition_calib.kalman import kalman_filter, kalman_smoother
from transition_calib.laplace import estimate_mode, laplace_loglik, mle_laplace
from transition_calib.simulate import HIGH_DEFAULT, default_only_params, simulate_migrations


def default_only_series(m, N):
    """Series with one performing row per column of ``m`` (shape (n, rows))."""
    m = np.atleast_2d(m)
    N = np.broadcast_to(N, m.shape)
    n, rows = m.shape
    counts = np.zeros((n, rows, rows + 1), dtype=np.int64)
    idx = np.arange(rows)
    counts[:, idx, idx] = N - m
    counts[:, :, -1] = m
    return MigrationSeries(counts)


def gaussian_case(rng):
    n, p, s = int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
    psi = ModelParameters.unit_variance(d=rng.normal(size=p), K=rng.normal(size=(p, s)),
                                        A=rng.uniform(0.1, 0.9, s))
    return GaussianFamily(rng.uniform(0.3, 1.5)), GaussianSeries(rng.normal(size=(n, p))), psi


class TestGaussianExactness:
    @pytest.mark.parametrize("seed", range(50))
    def test_matches_kalman_likelihood(self, seed):
        fam, data, psi = gaussian_case(np.random.default_rng(seed))
        exact = kalman_filter(fam.ssm(psi, data)).loglik
        assert laplace_loglik(fam, data, psi).loglik == pytest.approx(exact, abs=1e-9)

    def test_mode_is_smoothed_mean(self, rng):
        fam, data, psi = gaussian_case(rng)
        xs, _ = kalman_smoother(fam.ssm(psi, data))
        np.testing.assert_allclose(estimate_mode(fam, data, psi).x_mode, xs, atol=1e-9)

    def test_iteration_count(self, rng):
        # one Newton step reaches the mode; a second confirms the step vanished
        fam, data, psi = gaussian_case(rng)
        assert estimate_mode(fam, data, psi).iterations <= 2
        xs, _ = kalman_smoother(fam.ssm(psi, data))
        assert estimate_mode(fam, data, psi, x_init=xs).iterations == 1


class TestMode:
    @pytest.mark.parametrize("m", [50, 20, 3])
    def test_scalar_mode_matches_golden_section(self, m):
        psi = ModelParameters.unit_variance(d=[0.0], K=[1.0], A=[0.0])
        series = default_only_series([[m]], 100)
        res = estimate_mode("default_only", series, psi)
        f = lambda x: -(m * log_ndtr(x) + (100 - m) * log_ndtr(-x) - 0.5 * x * x)
        gold = minimize_scalar(f, bracket=(-4.0, 4.0), method="golden",
                               options={"xtol": 1e-12})
        assert res.x_mode[0, 0] == pytest.approx(gold.x, abs=1e-7)
        assert res.grad_norm <= 1e-6

    def test_no_data_gives_prior(self):
        psi = default_only_params([0.01, 0.04], 0.7, 0.3)
        series = default_only_series(np.zeros((4, 2), dtype=int), 0)
        res = estimate_mode("default_only", series, psi)
        np.testing.assert_allclose(res.x_mode, 0.0, atol=1e-12)
        assert laplace_loglik("default_only", series, psi).loglik == pytest.approx(0.0, abs=1e-10)

    def test_max_iter_exhausted(self):
        psi = default_only_params([0.01, 0.04], 0.7, 0.3)
        series = default_only_series([[100, 400], [50, 300]], 10_000)
        with pytest.raises(NonConvergenceError) as info:
            estimate_mode("default_only", series, psi, max_iter=1)
        assert info.value.last_iterate is not None
        assert info.value.iterations == 1

    def test_rejects_nonpositive_tol(self):
        psi = default_only_params([0.01], 0.7, 0.3)
        with pytest.raises(ValueError):
            estimate_mode("default_only", default_only_series([[5]], 100), psi, tol=0.0)


class TestLaplaceLikelihood:
    def test_quadrature_large_counts(self):
        d, k, a = np.array([-2.0]), 0.3, 0.7
        m, N = np.array([[230], [180]]), np.full((2, 1), 10_000)
        psi = ModelParameters.unit_variance(d=d, K=[k], A=[a])
        got = laplace_loglik("default_only", default_only_series(m, N), psi).loglik
        ref = gauss_hermite_default_only(d, k, m, N, a, 1 - a * a)
        assert abs(got - ref) <= 1e-3 * abs(ref)

    @pytest.mark.parametrize("N", [10, 30, 100])
    def test_quadrature_small_counts(self, N):
        d, k, a = np.array([-1.0]), 0.5, 0.6
        m = np.array([[2], [int(N * 0.3)]])
        psi = ModelParameters.unit_variance(d=d, K=[k], A=[a])
        got = laplace_loglik("default_only", default_only_series(m, N), psi).loglik
        ref = gauss_hermite_default_only(d, k, m, np.full((2, 1), N), a, 1 - a * a)
        assert abs(got - ref) <= 5e-2 * abs(ref)

    def test_zero_loading_is_independent_binomial(self):
        d = np.array([-2.0, -1.5])
        m, N = np.array([[20, 60], [25, 70]]), 1000
        psi = ModelParameters.unit_variance(d=d, K=[0.0], A=[0.5])
        got = laplace_loglik("default_only", default_only_series(m, N), psi).loglik
        p = np.exp(log_ndtr(d))
        assert got == pytest.approx(binom.logpmf(m, N, p).sum(), abs=1e-8)

    def test_pseudo_observations_reproducible(self):
        psi = default_only_params(HIGH_DEFAULT["pd"], 0.7, 0.3)
        sc = simulate_migrations("default_only", psi, HIGH_DEFAULT["populations"], 30,
                                 np.random.default_rng(1))
        a = laplace_loglik("default_only", sc.series, psi)
        b = laplace_loglik("default_only", sc.series, psi)
        np.testing.assert_array_equal(a.pseudo_obs, b.pseudo_obs)
        assert a.loglik == b.loglik

    def test_continuous_in_parameters(self):
        sc = simulate_migrations("default_only", default_only_params(HIGH_DEFAULT["pd"], 0.7, 0.3),
                                 HIGH_DEFAULT["populations"], 30, np.random.default_rng(2))
        ks = np.linspace(0.25, 0.35, 11)
        ll = [laplace_loglik("default_only", sc.series,
                             default_only_params(HIGH_DEFAULT["pd"], 0.7, k)).loglik for k in ks]
        near = [laplace_loglik("default_only", sc.series,
                               default_only_params(HIGH_DEFAULT["pd"], 0.7, k + 1e-7)).loglik
                for k in ks]
        assert np.max(np.abs(np.subtract(ll, near))) < 1e-3
        assert np.max(np.abs(np.diff(ll))) < 5.0


@pytest.fixture(scope="module")
def scenario():
    psi = default_only_params(HIGH_DEFAULT["pd"], 0.7, 0.3)
    return simulate_migrations("default_only", psi, HIGH_DEFAULT["populations"], 60,
                               np.random.default_rng(5))


class TestMLE:
    def test_deterministic(self, scenario):
        a = mle_laplace("default_only", scenario.series)
        b = mle_laplace("default_only", scenario.series)
        np.testing.assert_array_equal(a.vector, b.vector)
        assert a.loglik == b.loglik

    def test_optimum_beats_truth(self, scenario):
        res = mle_laplace("default_only", scenario.series)
        from transition_calib.params import default_map

        truth = default_map("default_only", scenario.series).build([0.7, 0.3])
        assert res.loglik >= laplace_loglik("default_only", scenario.series, truth).loglik - 1e-6
        assert set(res.params) == {"a", "k"}
