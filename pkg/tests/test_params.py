import numpy as np
import pytest

from cases import random_case
from transition_calib.params import (DefaultOnlyMap, FixedLevelsMap, PerformingMap,
                                     TwoFactorMap, default_map)
from transition_calib.simulate import derive_d_from_average


class TestMaps:
    def test_default_only_levels(self):
        pmap = DefaultOnlyMap([0.01, 0.04])
        psi = pmap.build([0.6, 0.4])
        np.testing.assert_allclose(psi.d, derive_d_from_average([0.01, 0.04], 0.4))
        np.testing.assert_allclose(psi.A, [[0.6]])
        np.testing.assert_allclose(psi.Q, [[0.64]])

    def test_zero_rates_clipped(self):
        psi = DefaultOnlyMap([0.0, 0.02]).build([0.5, 0.5])
        assert np.all(np.isfinite(psi.d))

    def test_performing_levels_strictly_decreasing(self):
        psi = PerformingMap([[0.2, 0.2], [0.5, 0.1], [0.9, 0.4]]).build([0.5, 0.3])
        assert np.all(np.diff(psi.d[:, 1:-1], axis=1) < 0)
        assert np.all(psi.d[:, 0] == np.inf)

    def test_two_factor(self):
        pmap = TwoFactorMap([0.01, 0.04, 0.1], [[0.15, 0.05], [0.8, 0.2], [0.9, 0.7]])
        vec = np.array([0.7, 0.8, 0.3, 0.2, 0.4])
        psi = pmap.build(vec)
        assert psi.rho == pytest.approx(0.4)
        np.testing.assert_allclose(np.diag(psi.A), [0.7, 0.8])
        np.testing.assert_allclose(pmap.vector(pmap.as_dict(vec)), vec)
        assert pmap.as_dict(vec)["k_p"] == pytest.approx(0.2)

    def test_fixed_levels(self):
        pmap = FixedLevelsMap(np.zeros((2, 3)), np.ones((2, 3, 1)))
        psi = pmap.build([0.4, 0.7])
        np.testing.assert_allclose(psi.K, 0.7)
        assert pmap.names == ("a1", "k")

    def test_clip_to_bounds(self):
        pmap = DefaultOnlyMap([0.01])
        np.testing.assert_allclose(pmap.clip([1.5, -1.0]), [pmap.upper[0], pmap.lower[1]])

    @pytest.mark.parametrize("family, kind", [("default_only", DefaultOnlyMap),
                                              ("performing", PerformingMap),
                                              ("two_factor", TwoFactorMap)])
    def test_default_map(self, rng, family, kind):
        series, _, _ = random_case(family, rng, R=4)
        pmap = default_map(family, series)
        assert isinstance(pmap, kind)
        for start in pmap.starts:
            pmap.build(start)

    def test_logistic_needs_explicit_map(self, rng):
        series, _, _ = random_case("logistic", rng)
        with pytest.raises(ValueError):
            default_map("logistic", series)
