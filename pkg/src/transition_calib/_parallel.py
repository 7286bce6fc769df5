"""Process-pool map with a worker count taken from the argument or environment."""

import os
from concurrent.futures import ProcessPoolExecutor

WORKERS_ENV = "TRANSITION_CALIB_WORKERS"


def resolve_workers(workers=None):
    """Worker count: explicit value, else ``TRANSITION_CALIB_WORKERS``, else 1."""
    if workers is None:
        raw = os.environ.get(WORKERS_ENV, "").strip()
        if not raw:
            return 1
        try:
            workers = int(raw)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    workers = int(workers)
    if workers < 1:
        raise ValueError("worker count must be at least 1")
    return workers


def map_tasks(fn, tasks, workers=None):
    """``[fn(t) for t in tasks]``, spread over processes when ``workers > 1``.

    Results come back in task order, so output never depends on scheduling.
    """
    tasks = list(tasks)
    workers = min(resolve_workers(workers), max(len(tasks), 1))
    if workers == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def seed_sequence(seed):
    """A SeedSequence from an int, SeedSequence, Generator or None."""
    import numpy as np

    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(int(seed.integers(2 ** 63)))
    return np.random.SeedSequence(seed)
