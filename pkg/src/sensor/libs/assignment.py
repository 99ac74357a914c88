from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from ortools.graph.python import linear_sum_assignment

from src.sensor.libs.tweezer_array import GridGeometry, Occupancy
from src.utils.logger import logger

# OR-Tools works on integer costs: distances are expressed in picometres
COST_UNIT = 1e-12


@dataclass
class Matching:
    """Resultado de la asignación átomo -> sitio objetivo"""
    pairs: List[Tuple[int, int]] = field(default_factory=list)
    stays: List[int] = field(default_factory=list)
    cost: float = 0.0  # metres
    unfilled: int = 0

    @property
    def is_complete(self) -> bool:
        return self.unfilled == 0


class AssignmentSolver:
    """Solver de asignación óptima átomos -> objetivos (suma mínima de distancias)"""

    def __init__(self, geom: GridGeometry):
        self.geom = geom
        self.positions = geom.positions()

    def solve_assignment(self, occupancy: Occupancy, pattern: Sequence[int]) -> Matching:
        """
        Resuelve la asignación con OR-Tools.

        LÓGICA:
        1. Átomos que ya están sobre un objetivo se quedan (costo cero)
        2. Los objetivos vacíos se emparejan con los átomos libres
        3. Matching de tamaño máximo con distancia euclidiana total mínima
        """
        targets = [int(t) for t in pattern]
        target_set = set(targets)
        stays = [t for t in targets if occupancy.sites[t]]
        open_targets = [t for t in targets if not occupancy.sites[t]]
        movable = [int(s) for s in occupancy.occupied() if int(s) not in target_set]

        logger.debug(
            f"Assignment: {len(movable)} movable atoms, {len(open_targets)} open targets, {len(stays)} in place"
        )

        if not open_targets or not movable:
            return Matching(stays=stays, unfilled=len(open_targets))

        distances = np.linalg.norm(
            self.positions[movable][:, None, :] - self.positions[open_targets][None, :, :], axis=-1
        )
        rows = self._solve_with_ortools(distances)

        pairs = [(movable[i], open_targets[j]) for i, j in rows]
        cost = float(sum(distances[i, j] for i, j in rows))
        matching = Matching(pairs=pairs, stays=stays, cost=cost, unfilled=len(open_targets) - len(pairs))
        logger.debug(f"Assignment solved: {len(pairs)} moves, cost {cost * 1e6:.3f} um")
        return matching

    def _solve_with_ortools(self, distances: np.ndarray) -> List[Tuple[int, int]]:
        """Cuadra la matriz con nodos ficticios de costo cero y resuelve con OR-Tools"""
        n_atoms, n_targets = distances.shape
        n = max(n_atoms, n_targets)
        costs = np.zeros((n, n), dtype=np.int64)
        costs[:n_atoms, :n_targets] = np.rint(distances / COST_UNIT).astype(np.int64)

        solver = linear_sum_assignment.SimpleLinearSumAssignment()
        for i in range(n):
            for j in range(n):
                solver.add_arc_with_cost(i, j, int(costs[i, j]))

        status = solver.solve()
        if status != solver.OPTIMAL:
            raise RuntimeError(f"OR-Tools assignment failed with status {status}")

        return [
            (i, solver.right_mate(i))
            for i in range(n_atoms)
            if solver.right_mate(i) < n_targets
        ]


def assign(occupancy: Occupancy, pattern: Sequence[int], geom: GridGeometry) -> Matching:
    return AssignmentSolver(geom).solve_assignment(occupancy, pattern)
