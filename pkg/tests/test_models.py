import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import ndtr, ndtri

from cases import FAMILY_NAMES, random_case
from oracles import central_diff, multinomial_pmf_log, rel_err
from transition_calib.domain import MigrationSeries, ModelParameters
from transition_calib.errors import DimensionError
from transition_calib.models import (DEFAULT_ONLY, LOGISTIC, TWO_FACTOR, get_family,
                                     log_p_given_signal, row_loglik, signal_from_factors,
                                     signal_grad_hess, transition_probs)
from transition_calib.simulate import cumulative_nd, two_factor_levels


class TestSignalFromFactors:
    def test_all_zero(self):
        psi = ModelParameters.unit_variance(d=[0.0], K=[1.0], A=[0.5])
        assert signal_from_factors("default_only", psi, np.zeros((1, 1))).theta[0, 0] == 0.0

    def test_level_plus_loading(self):
        psi = ModelParameters.unit_variance(d=[-1.8278], K=[0.3], A=[0.7])
        theta = signal_from_factors("default_only", psi, np.ones((1, 1))).theta
        assert theta[0, 0] == pytest.approx(-1.5278, abs=1e-12)

    def test_two_factor_loadings(self):
        d = np.array([[np.inf, 1.0, -2.0]])
        psi = ModelParameters.unit_variance(d=d, K=[0.3, 0.2], A=[0.7, 0.8], rho=0.4)
        theta = signal_from_factors("two_factor", psi, np.array([[1.0, -1.0]])).theta
        np.testing.assert_allclose(theta, [[0.3, -0.2]])

    def test_factor_count_mismatch(self):
        psi = ModelParameters.unit_variance(d=[0.0], K=[1.0], A=[0.5])
        with pytest.raises(DimensionError):
            signal_from_factors("default_only", psi, np.zeros((3, 2)))

    def test_observed_factor_loading(self):
        psi = ModelParameters.unit_variance(d=[0.0, 0.5], K=[1.0], A=[0.5], L=[2.0])
        theta = signal_from_factors("default_only", psi, np.zeros((2, 1)), u=[1.0, -1.0]).theta
        np.testing.assert_allclose(theta, [[2.0, 2.5], [-2.0, -1.5]])


class TestTransitionProbs:
    def test_logistic_equal_signals(self):
        np.testing.assert_allclose(transition_probs(LOGISTIC, None, np.full(4, 1.7)), 0.25)

    def test_default_only_at_zero(self):
        assert transition_probs(DEFAULT_ONLY, None, 0.0)[1] == 0.5

    def test_two_factor_recovers_long_run_row(self):
        nd = np.array([[0.85, 0.10, 0.05], [0.2, 0.6, 0.2], [0.1, 0.2, 0.7]])
        cum = cumulative_nd(nd)[:, 1:]
        # at zero loading the levels are plain probit quantiles
        d = two_factor_levels([0.01, 0.04, 0.1], cum, 0.0, 0.0)
        T = transition_probs(TWO_FACTOR, d[0], np.zeros(2))
        np.testing.assert_allclose(T, [0.99 * 0.85, 0.99 * 0.10, 0.99 * 0.05, 0.01], atol=1e-12)

    def test_non_monotone_thresholds_rejected(self):
        d = np.array([np.inf, -1.0, 0.5, -2.0])
        with pytest.raises(ValueError):
            transition_probs(TWO_FACTOR, d, np.zeros(2))

    @given(st.floats(-30, 30), st.floats(-30, 30), st.integers(0, 2**31))
    @settings(max_examples=100, deadline=None)
    def test_rows_sum_to_one(self, tD, tP, seed):
        rng = np.random.default_rng(seed)
        from cases import random_thresholds

        d = random_thresholds(rng, 1, 5)[0]
        T = transition_probs(TWO_FACTOR, d, np.array([tD, tP]))
        assert abs(T.sum() - 1.0) <= 1e-12 and np.all((T >= 0) & (T <= 1))
        theta = rng.uniform(-30, 30, size=5)
        assert abs(transition_probs(LOGISTIC, None, theta).sum() - 1.0) <= 1e-12

    # above ~5 the survival probability is below the resolution of 1 - PD in doubles
    @given(st.lists(st.floats(-8, 5), min_size=2, max_size=2, unique=True))
    def test_pd_increasing(self, pair):
        lo, hi = sorted(pair)
        if hi - lo < 1e-6:
            return
        assert transition_probs(DEFAULT_ONLY, None, lo)[1] < transition_probs(DEFAULT_ONLY, None, hi)[1]

    @given(st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.floats(-50, 50))
    def test_logistic_shift_invariance(self, theta, c):
        theta = np.array(theta)
        np.testing.assert_allclose(transition_probs(LOGISTIC, None, theta + c),
                                   transition_probs(LOGISTIC, None, theta), atol=1e-12)


class TestRowLoglik:
    def test_no_defaults_half_pd(self):
        assert row_loglik(DEFAULT_ONLY, [10, 0, 0, 0], [0.5, 0.5]) == pytest.approx(-6.931472,
                                                                                  abs=1e-6)

    def test_certain_event(self):
        assert row_loglik(LOGISTIC, [7, 0, 0, 0], [1.0, 0.0, 0.0, 0.0]) == 0.0

    def test_impossible_event(self):
        assert row_loglik(LOGISTIC, [6, 1, 0], [1.0, 0.0, 0.0]) == -np.inf

    @pytest.mark.parametrize("seed", range(5))
    def test_factorial_ratio_oracle(self, seed):
        rng = np.random.default_rng(seed)
        T = rng.dirichlet(np.ones(4))
        m = rng.multinomial(20, T)
        assert row_loglik(LOGISTIC, m, T) == pytest.approx(multinomial_pmf_log(m, T), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            row_loglik(LOGISTIC, [1, 2], [0.2, 0.3, 0.5])


class TestGradHess:
    def test_zero_score_at_binomial_mle(self):
        N, m = 1000, 40
        theta = np.full((1, 1), ndtri(m / N))
        counts = np.array([[[N - m, m]]])
        psi = ModelParameters.unit_variance(d=[0.0], K=[1.0], A=[0.5])
        D, H = signal_grad_hess(DEFAULT_ONLY, MigrationSeries(counts), theta, psi)
        assert abs(D[0, 0]) < 1e-9 and H[0, 0, 0] < 0

    @pytest.mark.parametrize("family", FAMILY_NAMES)
    @pytest.mark.parametrize("seed", range(3))
    def test_finite_differences(self, family, seed):
        series, psi, theta = random_case(family, np.random.default_rng(seed))
        D, H = signal_grad_hess(family, series, theta, psi)
        f = lambda t: log_p_given_signal(family, series, t, psi)
        assert rel_err(D, central_diff(f, theta)) <= 1e-6
        g = lambda t: signal_grad_hess(family, series, t, psi)[0]
        J = central_diff(g, theta)
        n = theta.shape[0]
        if family == "logistic":
            R1, R = theta.shape[1:]
            H_fd = np.stack([[J[k, i, :, k, i, :] for i in range(R1)] for k in range(n)])
        else:
            H_fd = np.stack([J[k, :, k, :] for k in range(n)])
        assert rel_err(H, H_fd) <= 1e-5

    @pytest.mark.parametrize("family", FAMILY_NAMES)
    def test_hessian_blocks_symmetric(self, family, rng):
        series, psi, theta = random_case(family, rng)
        H = signal_grad_hess(family, series, theta, psi)[1]
        np.testing.assert_allclose(H, np.swapaxes(H, -1, -2), atol=1e-10)

    def test_loglik_sums_row_logliks(self, rng):
        series, psi, theta = random_case("two_factor", rng)
        total = sum(row_loglik(TWO_FACTOR, series.counts[k, i], transition_probs(
            TWO_FACTOR, psi.d[i], theta[k])) for k in range(series.n) for i in range(series.R - 1))
        assert log_p_given_signal("two_factor", series, theta, psi) == pytest.approx(total, rel=1e-12)


def test_unknown_family():
    with pytest.raises(ValueError, match="unknown model family"):
        get_family("cloglog")
