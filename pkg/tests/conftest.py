# conftest.py
from datetime import datetime, timedelta

import numpy as np
import pytest
import torch

from config import TrainConfig
from grid_core import EventRecord, EventRegistry, WeatherGrid
from synthetic import SyntheticSpec, generate_synthetic

START = datetime(2022, 6, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


def box_event(top, left, bottom, right, types=("flood",), timestamp=START):
    """Event whose corners are cell centres of the given inclusive cell box."""
    return EventRecord(
        timestamp,
        ((top + 0.5, left + 0.5), (top + 0.5, right + 0.5),
         (bottom + 0.5, right + 0.5), (bottom + 0.5, left + 0.5)),
        types,
    )


@pytest.fixture
def make_grid():
    def factory(values, timestamp=START, **kwargs):
        return WeatherGrid(np.asarray(values, dtype=np.float64), timestamp, **kwargs)
    return factory


@pytest.fixture
def registry():
    return EventRegistry(("flood", "tornado"))


@pytest.fixture(scope="session")
def small_spec():
    return SyntheticSpec(
        height=20, width=20, channels=2, timesteps=12, events_per_step=1,
        box_min=3, box_max=6, event_types=2, seed=3,
    )


@pytest.fixture(scope="session")
def small_data(small_spec):
    return generate_synthetic(small_spec)


@pytest.fixture
def tiny_config():
    """Smallest end-to-end model: 20 x 20 grids, 10 x 10 regions."""
    return TrainConfig(
        seed=7, region_height=10, region_width=10, num_filters=3, time_embed_dim=8,
        memory_capacity=2, embed_dim=8, depth=2, num_heads=2, window_size=2,
        patch_height=4, patch_width=4, epochs=3, batch_size=2, patience=5,
    )


def hourly(count, start=START):
    return [start + timedelta(hours=t) for t in range(count)]
