import os
import subprocess
import sys

import numpy as np
import pytest

from oracles import random_ssm
from transition_calib import _kernels_py
from transition_calib.errors import ConditioningError

_kernels = pytest.importorskip("transition_calib._kernels")


def kalman_args(ssm):
    c = np.ascontiguousarray
    return (c(ssm.y), c(ssm.c), c(ssm.Z), c(ssm.H), c(ssm.mask.astype(np.uint8)), c(ssm.A),
            c(ssm.Q), c(ssm.a0), c(ssm.P0))


def assert_same(a, b, tol=1e-12):
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=tol, atol=tol)


class TestKernelEquivalence:
    @pytest.mark.parametrize("seed", range(10))
    def test_kalman_filter_and_smoother(self, seed):
        rng = np.random.default_rng(seed)
        ssm = random_ssm(rng, 6, int(rng.integers(1, 4)), int(rng.integers(1, 4)),
                         masked=bool(seed % 2))
        args = kalman_args(ssm)
        py = _kernels_py.kalman_filter_core(*args)
        cc = _kernels.kalman_filter_core(*args)
        assert_same(py, cc, 1e-10)
        sm = (args[5], *py[:4])
        assert_same(_kernels_py.rts_smoother_core(*sm), _kernels.rts_smoother_core(*sm), 1e-10)

    def test_same_failure_period(self):
        ssm = random_ssm(np.random.default_rng(0), 3, 1, 1)
        args = list(kalman_args(ssm))
        args[2] = np.zeros_like(args[2])
        args[3] = np.zeros_like(args[3])
        periods = []
        for impl in (_kernels_py, _kernels):
            with pytest.raises(ConditioningError) as info:
                impl.kalman_filter_core(*args)
            periods.append(info.value.period)
        assert periods == [0, 0]

    def test_binomial_terms_including_tails(self, rng):
        theta = np.concatenate([rng.normal(-2, 1, size=(20, 3)),
                                [[-40.0, 0.0, 40.0], [-8.0, 8.0, -1e-3]]])
        m = rng.integers(0, 50, size=theta.shape).astype(float)
        m[0] = 0.0
        nm = rng.integers(0, 5000, size=theta.shape).astype(float)
        nm[1] = 0.0
        assert_same(_kernels_py.probit_binomial_terms(theta, m, nm),
                    _kernels.probit_binomial_terms(theta, m, nm), 1e-10)

    def test_binomial_particles(self, rng):
        x = rng.normal(size=(200, 2))
        c = np.array([-2.3, -1.7, -1.2])
        Z = np.ascontiguousarray(rng.normal(0, 0.3, size=(3, 2)))
        m, nm = np.array([3.0, 0.0, 40.0]), np.array([997.0, 500.0, 0.0])
        np.testing.assert_allclose(_kernels_py.probit_binomial_particles(x, c, Z, m, nm),
                                   _kernels.probit_binomial_particles(x, c, Z, m, nm),
                                   rtol=1e-12)

    def test_ordered_terms(self, rng):
        upper = np.array([[np.inf, 1.2, -1.5], [1.0, -0.5, -1.0], [1.5, 0.6, -0.6]])
        lower = np.array([[1.2, -1.5, -np.inf], [-0.5, -1.0, -np.inf], [0.6, -0.6, -np.inf]])
        theta = np.concatenate([rng.normal(size=10), [-9.0, 9.0]])
        counts = rng.integers(0, 3000, size=(12, 3, 3)).astype(float)
        counts[0, 0, 0] = 0.0
        assert_same(_kernels_py.ordered_probit_terms(theta, upper, lower, counts),
                    _kernels.ordered_probit_terms(theta, upper, lower, counts), 1e-9)


@pytest.mark.parametrize("forced", ["python", "compiled"])
def test_backend_selected_by_environment(forced):
    env = dict(os.environ, TRANSITION_CALIB_BACKEND=forced)
    out = subprocess.run([sys.executable, "-c",
                          "import transition_calib as t; print(t.backend)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == forced
