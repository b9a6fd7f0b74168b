import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mrtmp.scenario import corridor_document, corridor_scenario
from mrtmp.world import load_map

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def open_map_doc(landmarks=(), obstacles=(), regions=None, sensor_range=4.0):
    """10x10 box, two rooms split at x = 5."""
    if regions is None:
        regions = [{"id": "A", "rect": [0.5, 0.5, 4.5, 9.5], "connected_to": ["B"]},
                   {"id": "B", "rect": [5.5, 0.5, 9.5, 9.5]}]
    return {"bounds": [0, 0, 10, 10], "obstacles": [list(o) for o in obstacles],
            "regions": regions,
            "landmarks": [{"id": f"lm{i}", "position": list(p)} for i, p in enumerate(landmarks)],
            "sensor_range": sensor_range}


@pytest.fixture
def open_world():
    return load_map(open_map_doc())


@pytest.fixture(scope="session")
def corridor():
    return corridor_scenario()


@pytest.fixture
def corridor_doc():
    return corridor_document()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
