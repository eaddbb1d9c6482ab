import numpy as np
import pytest

from amodlab.hexgrid import build_hex_grid
from amodlab.sim import EpisodeConfig
from amodlab.streams import synth_stream


@pytest.fixture(scope="session")
def grid5():
    return build_hex_grid(5, "small")


@pytest.fixture(scope="session")
def grid11():
    return build_hex_grid(11, "small")


@pytest.fixture
def env5(grid5):
    return EpisodeConfig(grid=grid5, n_vehicles=4)


def commute_dest_weights(n: int = 5) -> np.ndarray:
    """Two-pole demand pattern used by the desk-scale trend instance."""
    dw = np.zeros((n, n))
    dw[1] = [0, 0, 1, 20, 0]
    dw[3] = [0, 20, 1, 0, 0]
    dw[2] = [0, 1, 0, 1, 0]
    return dw


COMMUTE_RATES = np.array([0.0, 0.25, 0.06, 0.25, 0.0])


def commute_instance(grid):
    return EpisodeConfig(grid=grid, n_vehicles=4, placement_zones=(1, 2, 3))


def commute_streams(grid, n: int, seed0: int):
    return [
        synth_stream(grid, COMMUTE_RATES, seed=seed0 + i, dest_weights=commute_dest_weights())
        for i in range(n)
    ]
