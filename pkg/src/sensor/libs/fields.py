"""Vector magnetic-field scenes.

Frame: origin at array site (row 0, col 0), x along the quantization
axis, sensor plane z = 0. Positions may be 2-vectors (z = 0 implied) or
3-vectors, and any leading batch shape is accepted.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, Tuple

import numpy as np

from src.utils.errors import SceneError

X_AXIS = (1.0, 0.0, 0.0)


def _unit(v: Sequence[float]) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise SceneError("axis must be a non-zero vector")
    return v / norm


def as_points(r) -> np.ndarray:
    """Promote 2D positions to the z = 0 plane"""
    r = np.asarray(r, dtype=float)
    if r.shape[-1] == 2:
        r = np.concatenate([r, np.zeros(r.shape[:-1] + (1,))], axis=-1)
    return r


@dataclass(frozen=True)
class QuantizationField:
    magnitude: float = 283e-6
    axis: Tuple[float, float, float] = X_AXIS

    def __post_init__(self):
        if self.magnitude <= 0:
            raise SceneError("quantization magnitude must be positive")
        object.__setattr__(self, "axis", tuple(_unit(self.axis)))

    @property
    def vector(self) -> np.ndarray:
        return self.magnitude * np.asarray(self.axis)


@dataclass(frozen=True)
class QuadrupoleField:
    """Anti-Helmholtz field, linear around `center`, divergence-free by construction"""

    center: Tuple[float, float, float] = (28e-6, 49e-6, 0.0)
    axis: Tuple[float, float, float] = X_AXIS
    axial_gradient: float = 77.3e-9 / 1e-6  # T/m
    enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "axis", tuple(_unit(self.axis)))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def evaluate(self, r) -> np.ndarray:
        dr = as_points(r) - np.asarray(self.center)
        a = np.asarray(self.axis)
        along = dr @ a
        axial = along[..., None] * a
        return self.axial_gradient * axial - 0.5 * self.axial_gradient * (dr - axial)

    @property
    def zero_crossing(self) -> float:
        return float(np.asarray(self.center) @ np.asarray(self.axis))


@dataclass(frozen=True)
class FieldScene:
    quantization: QuantizationField = field(default_factory=QuantizationField)
    test: QuadrupoleField = field(default_factory=QuadrupoleField)
    uniform_offset: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @classmethod
    def reference_default(cls) -> "FieldScene":
        return cls()

    def with_test(self, enabled: bool) -> "FieldScene":
        return replace(self, test=replace(self.test, enabled=enabled))

    def with_offset(self, offset: Sequence[float]) -> "FieldScene":
        return replace(self, uniform_offset=tuple(float(v) for v in offset))


def field_at(scene: FieldScene, r) -> np.ndarray:
    """Vector sum of the quantization field, the enabled quadrupole and the offset"""
    points = as_points(r)
    total = np.broadcast_to(scene.quantization.vector, points.shape).copy()
    if scene.test.enabled:
        total += scene.test.evaluate(points)
    total += np.asarray(scene.uniform_offset)
    return total


def effective_field_magnitude(scene: FieldScene, r) -> np.ndarray:
    return np.linalg.norm(field_at(scene, r), axis=-1)


def axial_shift(scene: FieldScene, r) -> np.ndarray:
    """Change of |B| relative to the bare quantization field"""
    return effective_field_magnitude(scene, r) - scene.quantization.magnitude


def transverse_variation(scene: FieldScene, x: float, ys: Iterable[float]) -> float:
    """Peak-to-peak |B| along y at fixed x"""
    ys = np.asarray(list(ys), dtype=float)
    points = np.stack([np.full_like(ys, x), ys], axis=-1)
    magnitudes = effective_field_magnitude(scene, points)
    return float(magnitudes.max() - magnitudes.min())


def solve_scene_from_map(
    axis_values: Iterable[Tuple[float, float]],
    center_y: float = 49e-6,
) -> QuadrupoleField:
    """Quadrupole along x whose axial shift follows the least-squares line through (x, dB)"""
    pairs = np.asarray(list(axis_values), dtype=float)
    if pairs.ndim != 2 or len(pairs) < 2 or np.ptp(pairs[:, 0]) == 0:
        raise SceneError("need at least two distinct x values to solve for a gradient")

    slope, intercept = np.polyfit(pairs[:, 0], pairs[:, 1], 1)
    zero_x = -intercept / slope if slope != 0 else 0.0
    return QuadrupoleField(center=(zero_x, center_y, 0.0), axis=X_AXIS, axial_gradient=float(slope))
