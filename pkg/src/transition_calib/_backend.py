"""Pick the compiled kernels when available, else the numpy fallback.

Set ``TRANSITION_CALIB_BACKEND=python`` to force the fallback.
"""

import os

from . import _kernels_py

_forced = os.environ.get("TRANSITION_CALIB_BACKEND", "").strip().lower()

if _forced == "python":
    _impl = _kernels_py
    name = "python"
else:
    try:
        from . import _kernels as _impl
        name = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise
        _impl = _kernels_py
        name = "python"

kalman_filter_core = _impl.kalman_filter_core
rts_smoother_core = _impl.rts_smoother_core
probit_binomial_particles = _impl.probit_binomial_particles
probit_binomial_terms = _impl.probit_binomial_terms
ordered_probit_terms = _impl.ordered_probit_terms
