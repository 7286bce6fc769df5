"""Compare the compiled kernels with the numpy fallback.

Times each kernel on representative inputs with both implementations, then
an end-to-end Laplace likelihood and PF-IS run in a subprocess per backend
(the backend is fixed at import, so it cannot be switched in-process).

    python3 bench/benchmark.py [--repeat 5]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from transition_calib import _kernels_py

try:
    from transition_calib import _kernels
except ImportError:
    _kernels = None

END_TO_END = """
import time, numpy as np
from transition_calib import backend
from transition_calib.laplace import laplace_loglik
from transition_calib.particle import pf_importance
from transition_calib.simulate import HIGH_DEFAULT, default_only_params, simulate_migrations
cfg = HIGH_DEFAULT
psi = default_only_params(cfg["pd"], cfg["a"], cfg["k"])
sc = simulate_migrations("default_only", psi, cfg["populations"], 150, np.random.default_rng(0))
best = {}
for name, fn in (("laplace", lambda: laplace_loglik("default_only", sc.series, psi)),
                 ("pf_is N=1000", lambda: pf_importance("default_only", sc.series, psi,
                                                        N=1000, rng=1))):
    times = []
    for _ in range(REPEAT):
        t = time.perf_counter(); fn(); times.append(time.perf_counter() - t)
    best[name] = min(times)
print(backend, " ".join(f"{k}={v * 1e3:.2f}ms" for k, v in best.items()))
"""


def _inputs(rng):
    n, p, s = 150, 3, 2
    y = rng.normal(size=(n, p))
    Z = np.ascontiguousarray(np.broadcast_to(rng.normal(size=(p, s)), (n, p, s)))
    H = np.ascontiguousarray(np.broadcast_to(np.eye(p) * 0.5, (n, p, p)))
    A = np.ascontiguousarray(np.broadcast_to(np.diag([0.7, 0.8]), (n, s, s)))
    Q = np.ascontiguousarray(np.broadcast_to(np.diag([0.51, 0.36]), (n, s, s)))
    c = np.zeros((n, p))
    mask = np.ones((n, p), dtype=np.uint8)
    kalman = (y, c, Z, H, mask, A, Q, np.zeros(s), np.eye(s))

    theta = rng.normal(-2.0, 0.5, size=(n, 3))
    m = rng.integers(0, 500, size=(n, 3)).astype(float)
    nm = 10000.0 - m
    binom = (theta, m, nm)

    x = rng.normal(size=(1000, 1))
    particles = (x, np.array([-2.3, -1.7, -1.2]), np.array([[0.3], [0.3], [0.3]]),
                 m[0].copy(), nm[0].copy())

    upper = np.array([[np.inf, 1.2, -1.5], [1.0, -0.5, -1.0], [1.5, 0.6, -0.6]])
    lower = np.array([[1.2, -1.5, -np.inf], [-0.5, -1.0, -np.inf], [0.6, -0.6, -np.inf]])
    counts = rng.integers(0, 3000, size=(n, 3, 3)).astype(float)
    ordered = (rng.normal(size=n), upper, lower, counts)
    return {"kalman_filter_core": kalman, "probit_binomial_terms": binom,
            "probit_binomial_particles": particles, "ordered_probit_terms": ordered}


def _best(fn, args, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-6)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"{'kernel':28s}{'python':>12s}{'compiled':>12s}{'speedup':>10s}")
    for name, inputs in _inputs(rng).items():
        t_py = _best(getattr(_kernels_py, name), inputs, args.repeat)
        if _kernels is None:
            print(f"{name:28s}{t_py * 1e6:10.1f}us{'n/a':>12s}")
            continue
        t_c = _best(getattr(_kernels, name), inputs, args.repeat)
        print(f"{name:28s}{t_py * 1e6:10.1f}us{t_c * 1e6:10.1f}us{t_py / t_c:9.1f}x")

    print("\nend to end (high-default series, 150 periods):")
    script = END_TO_END.replace("REPEAT", str(args.repeat))
    for backend in ("python", "compiled"):
        env = dict(os.environ, TRANSITION_CALIB_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", script], env=env, capture_output=True,
                             text=True)
        print("  " + (out.stdout.strip() or out.stderr.strip().splitlines()[-1]))


if __name__ == "__main__":
    main()
