from typing import Optional


class SensorError(Exception):
    """Base class for every failure the sensor twin reports"""

    exit_code = 1


class ConfigError(SensorError):
    """Invalid configuration value; `key` is the dotted path of the offending entry"""

    exit_code = 2

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class DataError(SensorError):
    """Dataset could not be read or does not match the schema"""

    exit_code = 3

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class EstimationError(SensorError):
    exit_code = 4


class GridIndexError(SensorError, IndexError):
    exit_code = 2


class HarmonicRegimeError(SensorError):
    exit_code = 2


class SceneError(SensorError):
    exit_code = 2


class OutOfWindowError(SensorError):
    exit_code = 2


class OccupancyError(SensorError):
    exit_code = 3


class PlanningError(SensorError):
    """A move could not be routed; carries the move and the plan sequenced so far"""

    exit_code = 3

    def __init__(self, message: str, move=None, partial_plan=None):
        super().__init__(message)
        self.move = move
        self.partial_plan = partial_plan
