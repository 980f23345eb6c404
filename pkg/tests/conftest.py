import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def paired_linear_design(n=200, d=4, seed=0, n_test=100):
    """Every covariate row appears once treated and once control; outcomes
    are noiseless and linear, so the true propensity is exactly 0.5."""
    rng = np.random.default_rng(seed)
    x = rng.random((n, d))
    a0, a1 = rng.normal(), rng.normal()
    b0, b1 = rng.normal(size=d), rng.normal(size=d)
    xx = np.vstack([x, x])
    t = np.r_[np.ones(n), np.zeros(n)].astype(np.int64)
    y = np.where(t == 1, a1 + xx @ b1, a0 + xx @ b0)
    x_test = rng.random((n_test, d))
    tau_test = (a1 + x_test @ b1) - (a0 + x_test @ b0)
    return xx, t, y, x_test, tau_test
