import numpy as np
import pytest

from pathimpute import Telemetry, build_grid, merge_grid
from pathimpute.simulate import ObsParams, Sde2Params, observe, simulate_sde2
from pathimpute.potential import AttractorPotential


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_telemetry():
    t = np.array([0.0, 0.7, 1.1, 2.3, 3.0])
    x = np.array([[0.0, 1.0], [0.4, 0.8], [0.9, 0.2], [1.5, -0.3], [2.0, -0.1]])
    return Telemetry(t, x)


def simulated_sde2_path(m=50, T=5.0, sigma_v=1.0, beta=0.5, seed=7):
    grid = build_grid(0.0, T, m)
    pot = AttractorPotential(np.zeros(2), beta)
    params = Sde2Params(sigma_v, pot, (2.0, 0.0), (0.0, 0.0))
    return simulate_sde2(params, grid, seed)
