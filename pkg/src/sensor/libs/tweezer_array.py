from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np
from scipy.constants import k as BOLTZMANN

from src.utils.errors import GridIndexError, HarmonicRegimeError, OccupancyError, OutOfWindowError
from src.utils.logger import logger

# ==================== ESTRUCTURAS DE DATOS ====================

@dataclass(frozen=True)
class SiteIndex:
    """Posición (fila, columna) en la grilla de pinzas"""
    row: int
    col: int


@dataclass(frozen=True)
class GridGeometry:
    """Red de pinzas ópticas: filas, columnas, paso y origen (metros)"""
    rows: int = 15
    cols: int = 18
    pitch: float = 7.0e-6
    origin: Tuple[float, float] = (0.0, 0.0)

    @property
    def n_sites(self) -> int:
        return self.rows * self.cols

    @property
    def extent(self) -> Tuple[float, float]:
        return ((self.cols - 1) * self.pitch, (self.rows - 1) * self.pitch)

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.origin) + 0.5 * np.asarray(self.extent)

    def is_valid(self, row: int, col: int) -> bool:
        return 0 <= row < self.rows and 0 <= col < self.cols

    def flat_index(self, row: int, col: int) -> int:
        if not self.is_valid(row, col):
            raise GridIndexError(f"site ({row}, {col}) outside {self.rows}x{self.cols} grid")
        return row * self.cols + col

    def site_of(self, flat: int) -> SiteIndex:
        if not 0 <= flat < self.n_sites:
            raise GridIndexError(f"site id {flat} outside grid of {self.n_sites} sites")
        return SiteIndex(*divmod(int(flat), self.cols))

    def positions(self) -> np.ndarray:
        """(n_sites, 2) array of site positions in flat-index order"""
        rows, cols = np.divmod(np.arange(self.n_sites), self.cols)
        return np.asarray(self.origin) + self.pitch * np.stack([cols, rows], axis=-1)


@dataclass(frozen=True)
class SiteProperties:
    """Propiedades congeladas por sitio durante todo el experimento"""
    light_shift_offset: np.ndarray  # rad/s
    detection_true_positive: np.ndarray
    detection_false_positive: np.ndarray
    survival_probability: np.ndarray

    def __post_init__(self):
        for name in ("detection_true_positive", "detection_false_positive", "survival_probability"):
            values = getattr(self, name)
            if np.any((values < 0) | (values > 1)):
                raise ValueError(f"{name} must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.light_shift_offset)

    def subset(self, sites: np.ndarray) -> "SiteProperties":
        return SiteProperties(
            light_shift_offset=self.light_shift_offset[sites],
            detection_true_positive=self.detection_true_positive[sites],
            detection_false_positive=self.detection_false_positive[sites],
            survival_probability=self.survival_probability[sites],
        )


@dataclass
class Occupancy:
    """Ocupación: cada sitio vacío u ocupado por un átomo como máximo"""
    sites: np.ndarray
    probe: bool = False

    @classmethod
    def empty(cls, geom: GridGeometry) -> "Occupancy":
        return cls(sites=np.zeros(geom.n_sites, dtype=bool))

    def copy(self) -> "Occupancy":
        return Occupancy(sites=self.sites.copy(), probe=self.probe)

    @property
    def count(self) -> int:
        return int(self.sites.sum())

    def occupied(self) -> np.ndarray:
        return np.flatnonzero(self.sites)

    def place(self, site: int) -> None:
        if self.sites[site]:
            raise OccupancyError(f"site {site} already holds an atom")
        self.sites[site] = True

    def remove(self, site: int) -> None:
        if not self.sites[site]:
            raise OccupancyError(f"site {site} is empty")
        self.sites[site] = False

    def move(self, source: int, target: int) -> None:
        if self.sites[target]:
            raise OccupancyError(f"target site {target} is occupied")
        self.remove(source)
        self.sites[target] = True


@dataclass
class SteerableTweezer:
    """Pinza móvil: ventana direccionable de 400 µm x 400 µm centrada en la grilla"""
    center: Tuple[float, float] = (59.5e-6, 49.0e-6)
    window: float = 400e-6
    waist: float = 2.0e-6
    step_resolution: float = 100e-9
    position: Optional[Tuple[float, float]] = None

    @classmethod
    def for_grid(cls, geom: GridGeometry, **kwargs) -> "SteerableTweezer":
        return cls(center=tuple(geom.center), **kwargs)

    def in_window(self, position) -> bool:
        offset = np.abs(np.asarray(position, dtype=float) - np.asarray(self.center))
        return bool(np.all(offset <= 0.5 * self.window + 1e-12))

    def snap(self, position) -> Tuple[float, float]:
        steps = np.round(np.asarray(position, dtype=float) / self.step_resolution)
        x, y = steps * self.step_resolution
        return (float(x), float(y))

    def move_to(self, position) -> Tuple[float, float]:
        if not self.in_window(position):
            raise OutOfWindowError(
                f"position {tuple(position)} outside the {self.window * 1e6:.0f} um addressable window"
            )
        self.position = self.snap(position)
        logger.debug(f"Steerable tweezer moved to {self.position}")
        return self.position


# ==================== OPERACIONES ====================

def site_position(geom: GridGeometry, row: int, col: int) -> np.ndarray:
    geom.flat_index(row, col)
    return np.asarray(geom.origin) + geom.pitch * np.asarray([col, row], dtype=float)


def stochastic_load(geom: GridGeometry, p_load: float, rng: np.random.Generator) -> Occupancy:
    """Carga independiente Bernoulli(p_load) por sitio"""
    if not 0.0 <= p_load <= 1.0:
        raise ValueError("p_load must lie in [0, 1]")
    return Occupancy(sites=rng.random(geom.n_sites) < p_load)


def draw_site_properties(
    geom: GridGeometry,
    mean_light_shift: float,
    light_shift_spread: float,
    rng: np.random.Generator,
    true_positive: float = 0.99,
    false_positive: float = 0.005,
    survival: float = 0.99,
) -> SiteProperties:
    if light_shift_spread < 0:
        raise ValueError("light_shift_spread must be >= 0")
    n = geom.n_sites
    offsets = mean_light_shift + light_shift_spread * rng.standard_normal(n)
    return SiteProperties(
        light_shift_offset=offsets,
        detection_true_positive=np.full(n, true_positive),
        detection_false_positive=np.full(n, false_positive),
        survival_probability=np.full(n, survival),
    )


def localization_sigma(temperature: float, trap_depth: float, waist: float) -> float:
    """Harmonic rms radius per axis; `trap_depth` is given in kelvin (U / k_B)"""
    if temperature >= trap_depth:
        raise HarmonicRegimeError(
            f"temperature {temperature:g} K is not below the trap depth {trap_depth:g} K"
        )
    return waist * np.sqrt(BOLTZMANN * temperature / (4.0 * BOLTZMANN * trap_depth))


def localization_area(temperature: float, trap_depth: float, waist: float) -> float:
    """2D localization area (2 sigma)^2 in square metres"""
    return (2.0 * localization_sigma(temperature, trap_depth, waist)) ** 2


def pattern_sites(geom: GridGeometry, sites: Iterable[Tuple[int, int]]) -> List[int]:
    """Índices planos de un patrón objetivo; rechaza duplicados y sitios fuera de la grilla"""
    flat = [geom.flat_index(int(r), int(c)) for r, c in sites]
    if len(set(flat)) != len(flat):
        raise GridIndexError("target pattern lists a site twice")
    return flat


def rectangle_pattern(geom: GridGeometry, row0: int, col0: int, rows: int, cols: int) -> List[int]:
    return pattern_sites(geom, [(row0 + r, col0 + c) for r in range(rows) for c in range(cols)])
