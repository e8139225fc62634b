import numpy as np
import pytest

from pimle.missing_data import REFERENCE_SETTING, true_cell_probs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ref_probs():
    return true_cell_probs(REFERENCE_SETTING)


def random_interior_omega(rng):
    """A random interior point of the missing-outcome parameter space."""
    cells = rng.dirichlet(np.full(12, 2.0))
    cells = 0.02 + 0.76 * cells  # keep away from the boundary
    cells /= cells.sum()
    t = rng.uniform(0.05, 0.95, size=4)
    return np.concatenate([cells[:11], t])
