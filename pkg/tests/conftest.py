import numpy as np
import pytest

from survsc.data import Cohort


def make_toy_cohort(n=30, d=2, seed=0, treated=None):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    time = np.exp(3.0 + X @ np.linspace(0.5, -0.5, d) + 0.5 * rng.standard_normal(n))
    event = rng.random(n) < 0.8
    flags = np.zeros(n, dtype=bool) if treated is None else treated
    return Cohort(
        ids=tuple(str(i) for i in range(n)),
        X=X,
        time=time,
        event=event,
        treated=flags,
        feature_names=tuple(f"x{i}" for i in range(d)),
    )


@pytest.fixture
def toy_cohort():
    return make_toy_cohort()
