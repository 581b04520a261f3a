import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from timelens.envelope import ComplexEnvelope, SignalGrid

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_envelope(grid: SignalGrid, seed: int = 0, unit: bool = False) -> ComplexEnvelope:
    g = np.random.default_rng(seed)
    env = ComplexEnvelope(grid, g.normal(size=grid.num_samples) + 1j * g.normal(size=grid.num_samples))
    return env.normalized() if unit else env


@pytest.fixture
def grid256():
    return SignalGrid(256, 64e9)
