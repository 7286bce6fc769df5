import csv

import numpy as np
import pytest

from transition_calib.calibrate import (StudyConfig, likelihood_profile, residual_correlation,
                                        scenario_study, stepwise_calibrate)
from transition_calib.laplace import laplace_loglik, mle_laplace
from transition_calib.params import default_map
from transition_calib.particle import pf_importance
from transition_calib.simulate import (HIGH_DEFAULT, TWO_FACTOR, default_only_params,
                                       simulate_latent, simulate_migrations, two_factor_params)


@pytest.fixture(scope="module")
def high_default():
    psi = default_only_params(HIGH_DEFAULT["pd"], 0.7, 0.3)
    return simulate_migrations("default_only", psi, HIGH_DEFAULT["populations"], 40,
                               np.random.default_rng(21)).series


@pytest.fixture(scope="module")
def two_factor():
    psi = two_factor_params(TWO_FACTOR["pd"], TWO_FACTOR["nd"], TWO_FACTOR["a"],
                            TWO_FACTOR["k"], TWO_FACTOR["rho"])
    return simulate_migrations("two_factor", psi, TWO_FACTOR["populations"], 60,
                               np.random.default_rng(22)).series


class TestProfile:
    def test_single_point_matches_direct_call(self, high_default):
        prof = likelihood_profile("default_only", high_default, {"a": 0.7, "k": 0.3}, "k", [0.45])
        psi = default_map("default_only", high_default).build([0.7, 0.45])
        assert prof.loglik[0] == pytest.approx(
            laplace_loglik("default_only", high_default, psi).loglik, abs=1e-8)
        assert prof.n_particles is None

    def test_particle_profile_uses_fixed_seed(self, high_default):
        prof = likelihood_profile("default_only", high_default, {"a": 0.7, "k": 0.3}, "a",
                                  [0.5, 0.7], method="pf_is", N=200, seed=4)
        psi = default_map("default_only", high_default).build([0.7, 0.3])
        direct = pf_importance("default_only", high_default, psi, N=200,
                               rng=np.random.default_rng(4))
        assert prof.loglik[1] == pytest.approx(direct.loglik, abs=1e-6)

    def test_written_header(self, high_default, tmp_path):
        prof = likelihood_profile("default_only", high_default, {"a": 0.7, "k": 0.3}, "k",
                                  [0.2, 0.3], method="pf_bootstrap", N=300, seed=2)
        prof.write(tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0] == "# axis=k method=pf_bootstrap particles=300 seed=2"
        assert lines[1] == "value,loglik"
        assert len(lines) == 4

    @pytest.mark.parametrize("kwargs", [{"method": "mcmc"}, {"axis": "rho"}, {"values": []}])
    def test_rejects_bad_requests(self, high_default, kwargs):
        args = {"axis": "k", "values": [0.3], **kwargs}
        with pytest.raises(ValueError):
            likelihood_profile("default_only", high_default, {"a": 0.7, "k": 0.3}, **args)


class TestStepwise:
    def test_independent_factors(self):
        n = 400
        rng = np.random.default_rng(8)
        x_d = simulate_latent([[0.7]], [[0.51]], n, rng).x
        x_p = simulate_latent([[0.8]], [[0.36]], n, rng).x
        rho, resid = residual_correlation(x_d, x_p, 0.7, 0.8)
        assert abs(rho) <= 3 / np.sqrt(n)
        assert resid.shape == (n - 1, 2)

    def test_residuals_recover_innovations(self, rng):
        x = simulate_latent(np.diag([0.7, 0.8]), [[0.51, 0.2], [0.2, 0.36]], 30, rng)
        rho, resid = residual_correlation(x.x[:, 0], x.x[:, 1], 0.7, 0.8)
        np.testing.assert_allclose(resid, x.eta[1:], atol=1e-12)
        assert rho == pytest.approx(np.corrcoef(x.eta[1:].T)[0, 1])

    def test_too_short(self):
        with pytest.raises(ValueError):
            residual_correlation([0.1, 0.2], [0.3, 0.1], 0.5, 0.5)

    def test_first_step_is_default_only_fit(self, two_factor):
        res = stepwise_calibrate(two_factor)
        direct = mle_laplace("default_only", two_factor)
        np.testing.assert_array_equal(res.default.vector, direct.vector)
        assert res.params["a_d"] == direct.params["a"]
        assert set(res.params) == {"a_d", "a_p", "k_d", "k_p", "rho"}
        assert -1 < res.params["rho"] < 1


class TestStudy:
    config = StudyConfig.default_only(n_periods=30, n_scenarios=3)

    def test_deterministic_and_worker_independent(self):
        a = scenario_study(self.config, seed=5, workers=1)
        b = scenario_study(self.config, seed=5, workers=2)
        np.testing.assert_array_equal(a.estimates["laplace"], b.estimates["laplace"])
        c = scenario_study(self.config, seed=6, workers=1)
        assert not np.array_equal(a.estimates["laplace"], c.estimates["laplace"])

    def test_outputs(self, tmp_path):
        res = scenario_study(self.config, seed=1)
        res.write(tmp_path)
        with open(tmp_path / "estimates.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["scenario", "method", "parameter", "value"]
        assert len(rows) == 1 + 3 * 2
        summary = (tmp_path / "summary.txt").read_text()
        assert "average" in summary and "0.7000" in summary

    def test_single_scenario_warns(self):
        cfg = StudyConfig.default_only(n_periods=30, n_scenarios=1)
        with pytest.warns(RuntimeWarning):
            res = scenario_study(cfg, seed=0)
        with pytest.warns(RuntimeWarning):
            np.testing.assert_array_equal(res.std("laplace"), 0.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            StudyConfig(methods=("bayes",))
        with pytest.raises(ValueError):
            StudyConfig.default_only(methods=("stepwise",))
        with pytest.raises(ValueError):
            StudyConfig(family="logistic")

    def test_truth_override(self):
        cfg = StudyConfig().with_truth(rho=0.0)
        np.testing.assert_allclose(cfg.true_vector(), [0.7, 0.8, 0.3, 0.2, 0.0])
        assert cfg.true_params().rho == 0.0
