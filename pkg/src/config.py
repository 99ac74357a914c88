import hashlib
import json
import os
import re
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

import numpy as np

from src.sensor.libs.fields import FieldScene, QuadrupoleField, QuantizationField
from src.sensor.libs.physics import TWO_PI, AtomicConstants, RamseyParams, SensorStates, breit_rabi_splitting
from src.sensor.libs.tweezer_array import GridGeometry, pattern_sites, rectangle_pattern
from src.utils.errors import ConfigError

# unit suffix -> (dimension, SI multiplier)
UNITS = {
    "m": ("m", 1.0), "mm": ("m", 1e-3), "um": ("m", 1e-6), "µm": ("m", 1e-6), "nm": ("m", 1e-9),
    "s": ("s", 1.0), "ms": ("s", 1e-3), "us": ("s", 1e-6), "µs": ("s", 1e-6), "ns": ("s", 1e-9),
    "T": ("T", 1.0), "mT": ("T", 1e-3), "uT": ("T", 1e-6), "µT": ("T", 1e-6), "nT": ("T", 1e-9),
    "Hz": ("Hz", 1.0), "kHz": ("Hz", 1e3), "MHz": ("Hz", 1e6), "GHz": ("Hz", 1e9),
    "K": ("K", 1.0), "mK": ("K", 1e-3), "uK": ("K", 1e-6), "µK": ("K", 1e-6),
    "T/m": ("T/m", 1.0), "nT/um": ("T/m", 1e-3), "nT/µm": ("T/m", 1e-3), "uT/m": ("T/m", 1e-6),
}
_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([^\d\s].*?)?\s*$")

# excluded from dataset headers and config hashes
RUN_ONLY_KEYS = ("jobs", "out_dir")


def _q(default, unit: str, **kwargs):
    """Dataclass field carrying its SI unit for suffix parsing"""
    if isinstance(default, list):
        return field(default_factory=lambda: list(default), metadata={"unit": unit, **kwargs})
    return field(default=default, metadata={"unit": unit, **kwargs})


def _default_scan_positions() -> List[List[float]]:
    return [[x * 1e-6, 49e-6] for x in range(24, 35)]


@dataclass
class SensorSystemConfig:
    """Configuración del gemelo digital del magnetómetro de átomos individuales"""

    # Run
    master_seed: int = 20230615
    order_seed: int = 55
    jobs: int = 0  # 0 -> physical cores
    out_dir: str = "out"
    diagnostic_truth: bool = False

    # Grid Configuration
    grid_rows: int = 15
    grid_cols: int = 18
    grid_pitch: float = _q(7.0e-6, "m")
    grid_origin: List[float] = _q([0.0, 0.0], "m")

    # Field scene
    quantization_field: float = _q(283e-6, "T")
    quantization_axis: List[float] = field(default_factory=lambda: [1.0, 0.0, 0.0])
    test_enabled: bool = True
    test_gradient: float = _q(77.3e-3, "T/m")
    test_center: List[float] = _q([28e-6, 49e-6, 0.0], "m")
    test_axis: List[float] = field(default_factory=lambda: [1.0, 0.0, 0.0])
    uniform_offset: List[float] = _q([0.0, 0.0, 0.0], "T")
    drift_per_cycle: float = _q(0.0, "T")

    # Ramsey spectroscopy
    sensor_pair: str = "default"  # default | stretch
    rabi_frequency: float = _q(0.6e6, "Hz")
    pulse_duration: float = _q(0.42e-6, "s")
    ramsey_offset: float = _q(38.7e3, "Hz")
    two_photon_difference: Optional[float] = _q(None, "Hz")
    contrast: float = 0.55
    coherence_time: Optional[float] = _q(None, "s")  # None -> no decay
    detuning_slope: float = _q(9.2777e9, "Hz/T")
    stretch_factor: float = 2.5

    # Array, loading and detection
    load_probability: float = 0.5
    light_shift_mean: float = _q(0.0, "Hz")
    light_shift_spread: float = _q(1.3e3, "Hz")
    detection_true_positive: float = 0.99
    detection_false_positive: float = 0.005
    survival_probability: float = 0.99
    atom_temperature: float = _q(52e-6, "K")
    trap_depth_sensing: float = _q(0.2e-3, "K")
    trap_depth_imaging: float = _q(1.0e-3, "K")
    array_waist: float = _q(1.45e-6, "m")
    position_jitter: bool = False

    # State preparation
    prepare_up_probability: float = 0.30
    residual_down_probability: float = 0.0

    # Cycle plan
    t_min: float = _q(2e-6, "s")
    t_max: float = _q(110e-6, "s")
    t_steps: int = 55
    interleave_test_field: bool = True
    repetitions: Optional[int] = None  # None -> sized from target_events_per_site
    target_events_per_site: int = 719
    event_counting: str = "prepared"  # prepared | loaded
    exposure_time: float = _q(60e-3, "s")
    cycle_rate: float = _q(10.0, "Hz")
    integration_time: float = _q(3600.0, "s")

    # Assembly
    pattern_rect: List[int] = field(default_factory=lambda: [6, 7, 3, 3])
    pattern_sites: List[List[int]] = field(default_factory=list)
    move_success_probability: float = 0.98
    blocking_radius: float = _q(2e-6, "m")
    retention_probability: float = 0.99
    max_rounds: int = 3
    assembly_cycles: int = 200

    # Steerable probe / scan
    probe_waist: float = _q(2.0e-6, "m")
    probe_window: float = _q(400e-6, "m")
    probe_step: float = _q(100e-9, "m")
    probe_load_probability: float = 0.5
    probe_light_shift: Optional[float] = _q(None, "Hz")  # None -> light_shift_mean
    scan_positions: List[List[float]] = field(
        default_factory=_default_scan_positions, metadata={"unit": "m"}
    )

    # Estimation
    min_t_values: int = 8
    min_peak_power: float = 0.25
    nyquist_guard: float = 0.05

    # ==================== DERIVED ====================

    def geometry(self) -> GridGeometry:
        return GridGeometry(self.grid_rows, self.grid_cols, self.grid_pitch, tuple(self.grid_origin))

    def scene(self) -> FieldScene:
        return FieldScene(
            quantization=QuantizationField(self.quantization_field, tuple(self.quantization_axis)),
            test=QuadrupoleField(
                center=tuple(self.test_center),
                axis=tuple(self.test_axis),
                axial_gradient=self.test_gradient,
                enabled=self.test_enabled,
            ),
            uniform_offset=tuple(self.uniform_offset),
        )

    def states(self) -> SensorStates:
        return SensorStates.stretch() if self.sensor_pair == "stretch" else SensorStates.default()

    def constants(self) -> AtomicConstants:
        return AtomicConstants.rb85()

    def two_photon_difference_rad(self) -> float:
        """Delta12 in rad/s; preset so the bare scene sits at the Ramsey offset"""
        if self.two_photon_difference is not None:
            return TWO_PI * self.two_photon_difference
        splitting = float(breit_rabi_splitting(self.quantization_field, self.states(), self.constants()))
        return splitting + TWO_PI * (self.light_shift_mean + self.ramsey_offset)

    def ramsey_params(self) -> RamseyParams:
        return RamseyParams(
            rabi_frequency=TWO_PI * self.rabi_frequency,
            pulse_duration=self.pulse_duration,
            two_photon_difference=self.two_photon_difference_rad(),
            contrast=self.contrast,
            coherence_time=np.inf if self.coherence_time is None else self.coherence_time,
        )

    def t_values(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.t_steps)

    def repetitions_per_state(self) -> int:
        """Cycles per (T, field state) needed for the target event count per site"""
        if self.repetitions is not None:
            return self.repetitions
        per_cycle = self.load_probability
        if self.event_counting == "prepared":
            per_cycle *= self.prepare_up_probability
        if per_cycle <= 0:
            return 0
        return int(round(self.target_events_per_site / (self.t_steps * per_cycle)))

    def pattern(self) -> List[int]:
        geom = self.geometry()
        if self.pattern_sites:
            return pattern_sites(geom, [tuple(s) for s in self.pattern_sites])
        return rectangle_pattern(geom, *self.pattern_rect)


# ==================== SERIALIZATION ====================

def parse_quantity(value: Any, unit: str, key: str) -> Any:
    """Normalize a number or a '<number> <suffix>' string to SI"""
    if value is None or isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, list):
        return [parse_quantity(v, unit, f"{key}[{i}]") for i, v in enumerate(value)]
    if not isinstance(value, str):
        raise ConfigError(key, f"expected a number or a quantity string, got {type(value).__name__}")

    match = _QUANTITY.match(value)
    if not match:
        raise ConfigError(key, f"cannot parse quantity '{value}'")
    number, suffix = float(match.group(1)), match.group(2)
    if suffix is None:
        return number
    if unit == "Hz/T":
        # kHz/uT and friends
        try:
            num, den = suffix.split("/")
            return number * UNITS[num.strip()][1] / UNITS[den.strip()][1]
        except (KeyError, ValueError):
            raise ConfigError(key, f"unknown unit '{suffix}' (expected a frequency per field)")
    if suffix not in UNITS or UNITS[suffix][0] != unit:
        raise ConfigError(key, f"unit '{suffix}' is not a {unit} unit")
    return number * UNITS[suffix][1]


def config_to_dict(cfg: SensorSystemConfig) -> Dict[str, Any]:
    return asdict(cfg)


def experiment_dict(cfg: SensorSystemConfig) -> Dict[str, Any]:
    """Config without the run-only keys; this is what datasets embed and hash"""
    values = config_to_dict(cfg)
    for key in RUN_ONLY_KEYS:
        values.pop(key, None)
    return values


def config_from_dict(data: Dict[str, Any], base: Optional[SensorSystemConfig] = None) -> SensorSystemConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    values = config_to_dict(base or SensorSystemConfig())
    spec = {f.name: f for f in fields(SensorSystemConfig)}

    for key, raw in data.items():
        if key not in spec:
            raise ConfigError(key, "unknown configuration key")
        f = spec[key]
        unit = f.metadata.get("unit")
        value = parse_quantity(raw, unit, key) if unit else raw
        values[key] = _coerce(key, value, f)

    cfg = SensorSystemConfig(**values)
    validate(cfg)
    return cfg


def _coerce(key: str, value: Any, f) -> Any:
    type_name = f.type.__name__ if isinstance(f.type, type) else str(f.type)
    if value is None:
        if "Optional" not in type_name:
            raise ConfigError(key, "may not be null")
        return None
    if type_name == "bool":
        if not isinstance(value, bool):
            raise ConfigError(key, "expected true/false")
        return value
    if "List" in type_name:
        if not isinstance(value, list):
            raise ConfigError(key, "expected a list")
        return value
    if type_name == "str":
        if not isinstance(value, str):
            raise ConfigError(key, "expected a string")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, "expected a number")
    if "int" in type_name and "float" not in type_name:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(key, "expected an integer")
        return int(value)
    return float(value)


def validate(cfg: SensorSystemConfig) -> None:
    """Range checks; raises ConfigError naming the first offending key"""
    probabilities = (
        "contrast", "load_probability", "detection_true_positive", "detection_false_positive",
        "survival_probability", "prepare_up_probability", "residual_down_probability",
        "move_success_probability", "retention_probability", "probe_load_probability",
        "min_peak_power", "nyquist_guard",
    )
    for key in probabilities:
        if not 0.0 <= getattr(cfg, key) <= 1.0:
            raise ConfigError(key, "must lie in [0, 1]")
    if cfg.prepare_up_probability + cfg.residual_down_probability > 1.0:
        raise ConfigError("residual_down_probability", "preparation probabilities exceed 1")

    positive = (
        "grid_rows", "grid_cols", "grid_pitch", "quantization_field", "rabi_frequency",
        "t_min", "t_max", "t_steps", "cycle_rate", "integration_time", "detuning_slope",
        "stretch_factor", "probe_window", "probe_step", "array_waist", "trap_depth_sensing",
    )
    for key in positive:
        if getattr(cfg, key) <= 0:
            raise ConfigError(key, "must be positive")
    for key in ("pulse_duration", "light_shift_spread", "blocking_radius", "atom_temperature"):
        if getattr(cfg, key) < 0:
            raise ConfigError(key, "must be >= 0")
    if cfg.t_max < cfg.t_min:
        raise ConfigError("t_max", "must not be below t_min")
    if cfg.repetitions is not None and cfg.repetitions < 0:
        raise ConfigError("repetitions", "must be >= 0")
    if cfg.coherence_time is not None and cfg.coherence_time <= 0:
        raise ConfigError("coherence_time", "must be positive or null")
    if cfg.sensor_pair not in ("default", "stretch"):
        raise ConfigError("sensor_pair", "must be 'default' or 'stretch'")
    if cfg.event_counting not in ("prepared", "loaded"):
        raise ConfigError("event_counting", "must be 'prepared' or 'loaded'")
    if cfg.max_rounds < 1:
        raise ConfigError("max_rounds", "must be >= 1")
    if cfg.jobs < 0:
        raise ConfigError("jobs", "must be >= 0")
    if len(cfg.pattern_rect) != 4:
        raise ConfigError("pattern_rect", "expected [row0, col0, rows, cols]")
    for key, length in (("grid_origin", 2), ("quantization_axis", 3), ("test_center", 3),
                        ("test_axis", 3), ("uniform_offset", 3)):
        if len(getattr(cfg, key)) != length:
            raise ConfigError(key, f"expected {length} components")
    for i, pos in enumerate(cfg.scan_positions):
        if len(pos) != 2:
            raise ConfigError(f"scan_positions[{i}]", "expected [x, y]")


def validate_pattern(cfg: SensorSystemConfig) -> None:
    """Assembly target must fit the grid"""
    try:
        cfg.pattern()
    except Exception as e:
        raise ConfigError("pattern_sites" if cfg.pattern_sites else "pattern_rect", str(e))


def config_json(cfg: SensorSystemConfig) -> str:
    """Canonical JSON (sorted keys, compact)"""
    return json.dumps(experiment_dict(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: SensorSystemConfig) -> str:
    return hashlib.sha256(config_json(cfg).encode("utf-8")).hexdigest()


def load_config(path: Optional[str] = None) -> SensorSystemConfig:
    """Load a JSON config file on top of the defaults"""
    if path is None:
        return SensorSystemConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError("--config", f"file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError("--config", f"invalid JSON at line {e.lineno}: {e.msg}")
    return config_from_dict(data)


def load_config_from_env(cfg: Optional[SensorSystemConfig] = None) -> SensorSystemConfig:
    """Load configuration overrides from environment variables"""
    cfg = cfg or config
    try:
        cfg.master_seed = int(os.getenv("SENSOR_MASTER_SEED", str(cfg.master_seed)))
        cfg.jobs = int(os.getenv("SENSOR_JOBS", str(cfg.jobs)))
    except ValueError as e:
        raise ConfigError("environment", str(e))
    cfg.out_dir = os.getenv("SENSOR_OUT_DIR", cfg.out_dir)
    return cfg


# Global configuration instance
config = SensorSystemConfig()
