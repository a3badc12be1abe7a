import numpy as np
import pytest

from urbanflows.runconfig import RunConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def mini_runconfig(**overrides):
    """Smallest bundle that exercises every code path: N=4, M=2, P=2."""
    base = dict(n=4, m=2, p=2, k_zone=1, k_config=1,
                zone_hidden=(6,), config_hidden=(6,), heads=1,
                stem_channels=2, n_cx=2, batch_size=4, seed=11)
    base.update(overrides)
    return RunConfig(**base).validate()