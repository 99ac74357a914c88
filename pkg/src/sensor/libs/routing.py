from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.sensor.libs.assignment import Matching
from src.sensor.libs.tweezer_array import GridGeometry, Occupancy
from src.utils.errors import PlanningError
from src.utils.logger import logger

Point = Tuple[float, float]


@dataclass
class Move:
    """Transporte de un átomo con la pinza móvil"""
    source: int
    target: int
    path: List[Point]

    @property
    def waypoints(self) -> List[Point]:
        return self.path[1:-1]

    @property
    def length(self) -> float:
        points = np.asarray(self.path)
        return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


@dataclass
class MovePlan:
    moves: List[Move] = field(default_factory=list)

    @property
    def total_length(self) -> float:
        return float(sum(m.length for m in self.moves))

    def __len__(self) -> int:
        return len(self.moves)

    def trace(self, geom: Optional[GridGeometry] = None) -> str:
        """One line per move: order, source, target, path length, waypoints"""
        lines = []
        for k, move in enumerate(self.moves):
            src, tgt = move.source, move.target
            if geom is not None:
                s, t = geom.site_of(src), geom.site_of(tgt)
                src, tgt = f"({s.row},{s.col})", f"({t.row},{t.col})"
            via = " ".join(f"{x * 1e6:.3f},{y * 1e6:.3f}" for x, y in move.waypoints) or "-"
            lines.append(f"move {k} src={src} tgt={tgt} length_um={move.length * 1e6:.3f} via_um={via}")
        lines.append(f"total_length_um={self.total_length * 1e6:.3f} moves={len(self.moves)}")
        return "\n".join(lines)


def segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance of each point to the segment a-b"""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0:
        return np.linalg.norm(points - a, axis=-1)
    t = np.clip(((points - a) @ ab) / denom, 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=-1)


def path_is_clear(path: Sequence[Point], obstacles: np.ndarray, blocking_radius: float) -> bool:
    if len(obstacles) == 0:
        return True
    points = np.asarray(path, dtype=float)
    return all(
        segment_distances(obstacles, points[i], points[i + 1]).min() >= blocking_radius
        for i in range(len(points) - 1)
    )


def _detour(a: np.ndarray, b: np.ndarray, offset: float, side: float) -> List[Point]:
    """Path with one waypoint displaced perpendicular to a-b at its midpoint"""
    direction = b - a
    normal = np.array([-direction[1], direction[0]]) / np.linalg.norm(direction)
    waypoint = 0.5 * (a + b) + side * offset * normal
    return [tuple(a), tuple(waypoint), tuple(b)]


def sequence_moves(
    matching: Matching,
    occupancy: Occupancy,
    geom: GridGeometry,
    blocking_radius: float = 2e-6,
) -> MovePlan:
    """
    Ordena los movimientos para que ningún tramo pase a menos de
    `blocking_radius` de un átomo ajeno; si no hay orden libre, prueba
    un único punto de paso desplazado 2*blocking_radius.
    """
    positions = geom.positions()
    occupied = occupancy.sites.copy()
    pending = sorted(
        matching.pairs,
        key=lambda pair: (float(np.linalg.norm(positions[pair[0]] - positions[pair[1]])), pair[0]),
    )
    plan = MovePlan()

    def obstacles_for(source: int) -> np.ndarray:
        mask = occupied.copy()
        mask[source] = False
        return positions[mask]

    def emit(source: int, target: int, path: List[Point]) -> None:
        plan.moves.append(Move(source=source, target=target, path=path))
        occupied[source] = False
        occupied[target] = True
        pending.remove((source, target))
        logger.debug(f"Sequenced move {source} -> {target} with {len(path) - 2} waypoint(s)")

    while pending:
        ready = [(s, t) for s, t in pending if not occupied[t]]

        direct = next(
            (
                (s, t)
                for s, t in ready
                if path_is_clear([positions[s], positions[t]], obstacles_for(s), blocking_radius)
            ),
            None,
        )
        if direct is not None:
            s, t = direct
            emit(s, t, [tuple(positions[s]), tuple(positions[t])])
            continue

        detoured = False
        for s, t in ready:
            for side in (1.0, -1.0):
                path = _detour(positions[s], positions[t], 2.0 * blocking_radius, side)
                if path_is_clear(path, obstacles_for(s), blocking_radius):
                    emit(s, t, path)
                    detoured = True
                    break
            if detoured:
                break

        if not detoured:
            blocked = pending[0]
            raise PlanningError(
                f"no clear path for move {blocked[0]} -> {blocked[1]} ({len(pending)} move(s) left)",
                move=blocked,
                partial_plan=plan,
            )

    return plan
