import numpy as np
import pytest

from pathfl.config import RunConfig
from pathfl.synth import ClientProfile

TINY_PROFILES = [
    ClientProfile((0.85, 0.6, 0.75), (0.05, 0.05, 0.05), blob_count=(1, 2), blob_radius=(2, 4),
                  fg_offset=(-0.4, -0.3, -0.1), name="pink"),
    ClientProfile((0.55, 0.4, 0.7), (0.08, 0.08, 0.06), blob_count=(1, 2), blob_radius=(2, 4),
                  fg_offset=(-0.3, -0.25, -0.1), name="purple"),
    ClientProfile((0.1, 0.2, 0.15), (0.04, 0.04, 0.04), blob_count=(1, 2), blob_radius=(2, 4),
                  fg_offset=(0.3, 0.5, 0.2), name="green"),
]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(**kw):
    """A 16x16, 3-client configuration that runs a round in well under a second."""
    base = dict(method="pathfl", clients=3, rounds=3, local_epochs=1, height=16, width=16,
                train_per_client=6, test_per_client=2, base_channels=2, lr=1e-3, seed=7,
                profiles=list(TINY_PROFILES))
    base.update(kw)
    return RunConfig(**base).validate()


@pytest.fixture
def tiny():
    return tiny_config
