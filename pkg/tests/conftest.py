import numpy as np
import pytest

from lidarkp.synth import SensorModel, make_dataset


@pytest.fixture(scope="session")
def mini_sensor():
    return SensorModel(beams=64, columns=256)


@pytest.fixture(scope="session")
def mini_room_ds(tmp_path_factory, mini_sensor):
    """Small room dataset shared by ingest/pipeline tests."""
    out = tmp_path_factory.mktemp("mini_room")
    return make_dataset("room", 8, out, seed=0, sensor=mini_sensor)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
