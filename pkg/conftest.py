import json

import numpy as np
import pytest

from src.config import SensorSystemConfig
from src.sensor.libs.physics import TWO_PI, AtomicConstants, RamseyParams


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def rb85():
    return AtomicConstants.rb85()


@pytest.fixture
def ideal_ramsey():
    """Ideal pi/2 pulses, full contrast, no decay, no detuning offset"""
    rabi = TWO_PI * 0.6e6
    return RamseyParams(rabi_frequency=rabi, pulse_duration=0.5 * np.pi / rabi, two_photon_difference=0.0)


@pytest.fixture
def default_config():
    return SensorSystemConfig()


@pytest.fixture
def small_config():
    """3 x 6 grid with the default physics and a reduced repetition count"""
    return SensorSystemConfig(
        grid_rows=3,
        grid_cols=6,
        repetitions=20,
        pattern_rect=[0, 1, 2, 2],
        jobs=1,
    )


@pytest.fixture
def write_config(tmp_path):
    """Write a config dict to a JSON file and return its path"""

    def _write(data, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return str(path)

    return _write
