from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.sensor.libs.assignment import AssignmentSolver
from src.sensor.libs.routing import MovePlan, sequence_moves
from src.sensor.libs.tweezer_array import GridGeometry, Occupancy, stochastic_load
from src.utils.errors import PlanningError
from src.utils.logger import logger
from src.utils.rng import StreamKind, stream


def execute_plan(
    plan: MovePlan, occupancy: Occupancy, p_move_success: float, rng: np.random.Generator
) -> Tuple[Occupancy, int]:
    """Run the moves in order on a private copy; a failed move loses the atom"""
    if not 0.0 <= p_move_success <= 1.0:
        raise ValueError("p_move_success must lie in [0, 1]")

    result = occupancy.copy()
    losses = 0
    draws = rng.random(len(plan))
    for move, draw in zip(plan.moves, draws):
        if draw < p_move_success:
            result.move(move.source, move.target)
        else:
            result.remove(move.source)
            losses += 1
    return result, losses


@dataclass
class AssemblyHistory:
    """Registro ciclo a ciclo del ensamblado repetido"""
    pattern: List[int]
    occupancies: List[Occupancy] = field(default_factory=list)  # after the last round of each cycle
    full: List[bool] = field(default_factory=list)
    rounds: List[int] = field(default_factory=list)
    losses: List[int] = field(default_factory=list)
    blocked: List[int] = field(default_factory=list)
    plans: List[MovePlan] = field(default_factory=list)

    @property
    def n_cycles(self) -> int:
        return len(self.full)

    @property
    def duty_cycle(self) -> float:
        return float(np.mean(self.full)) if self.full else 0.0

    @property
    def duty_cycle_error(self) -> float:
        if not self.full:
            return 0.0
        d = self.duty_cycle
        return float(np.sqrt(d * (1.0 - d) / len(self.full)))

    @property
    def mean_fill(self) -> float:
        if not self.occupancies:
            return 0.0
        return float(np.mean([occ.sites[self.pattern].mean() for occ in self.occupancies]))

    def representative_plan(self) -> Optional[MovePlan]:
        return next((p for p in self.plans if len(p)), self.plans[0] if self.plans else None)

    def summary(self) -> str:
        lines = [
            f"cycles={self.n_cycles}",
            f"pattern_sites={len(self.pattern)}",
            f"duty_cycle={self.duty_cycle:.6f}",
            f"duty_cycle_error={self.duty_cycle_error:.6f}",
            f"mean_fill={self.mean_fill:.6f}",
            f"mean_rounds={np.mean(self.rounds) if self.rounds else 0.0:.6f}",
            f"total_losses={sum(self.losses)}",
            f"blocked_moves={sum(self.blocked)}",
        ]
        return "\n".join(lines)


class AssemblyCoordinator:
    """
    Rellena un patrón objetivo entre ciclos de medida.

    LÓGICA POR CICLO:
    1. Los átomos del patrón sobreviven con `retention`, el resto de la grilla se recarga
    2. Hasta `max_rounds` rondas de asignar -> secuenciar -> ejecutar
    3. Se registra si el patrón quedó completo
    """

    def __init__(
        self,
        geom: GridGeometry,
        pattern: Sequence[int],
        p_load: float = 0.5,
        p_move_success: float = 0.98,
        retention: float = 0.99,
        blocking_radius: float = 2e-6,
        max_rounds: int = 3,
    ):
        if max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        self.geom = geom
        self.pattern = [int(s) for s in pattern]
        self.p_load = p_load
        self.p_move_success = p_move_success
        self.retention = retention
        self.blocking_radius = blocking_radius
        self.max_rounds = max_rounds
        self.solver = AssignmentSolver(geom)

        self._in_pattern = np.zeros(geom.n_sites, dtype=bool)
        self._in_pattern[self.pattern] = True

    def is_full(self, occupancy: Occupancy) -> bool:
        return bool(occupancy.sites[self.pattern].all())

    def plan_round(self, occupancy: Occupancy) -> Tuple[MovePlan, int]:
        """Plan for one round; a blocked move truncates the plan (count returned)"""
        matching = self.solver.solve_assignment(occupancy, self.pattern)
        try:
            return sequence_moves(matching, occupancy, self.geom, self.blocking_radius), 0
        except PlanningError as e:
            logger.warning(f"Assembly round truncated: {e}")
            return e.partial_plan, 1

    def reload(self, occupancy: Occupancy, rng: np.random.Generator) -> Occupancy:
        u = rng.random(self.geom.n_sites)
        sites = np.where(self._in_pattern, occupancy.sites & (u < self.retention), u < self.p_load)
        return Occupancy(sites=sites)

    def run(self, n_cycles: int, rng: np.random.Generator) -> AssemblyHistory:
        history = AssemblyHistory(pattern=self.pattern)
        occupancy: Optional[Occupancy] = None

        for cycle in range(n_cycles):
            if occupancy is None:
                occupancy = stochastic_load(self.geom, self.p_load, rng)
            else:
                occupancy = self.reload(occupancy, rng)

            rounds = losses = blocked = 0
            while rounds < self.max_rounds and not self.is_full(occupancy):
                plan, n_blocked = self.plan_round(occupancy)
                blocked += n_blocked
                if len(plan) == 0:
                    break
                occupancy, lost = execute_plan(plan, occupancy, self.p_move_success, rng)
                history.plans.append(plan)
                rounds += 1
                losses += lost

            history.occupancies.append(occupancy.copy())
            history.full.append(self.is_full(occupancy))
            history.rounds.append(rounds)
            history.losses.append(losses)
            history.blocked.append(blocked)
            logger.debug(
                f"Assembly cycle {cycle}: rounds={rounds} losses={losses} full={history.full[-1]}"
            )

        logger.info(
            f"Repeated assembly: duty cycle {history.duty_cycle:.3f} +/- {history.duty_cycle_error:.3f} over {n_cycles} cycles"
        )
        return history


def repeated_assembly(
    engine,
    pattern: Optional[Sequence[int]] = None,
    max_rounds: Optional[int] = None,
    n_cycles: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> AssemblyHistory:
    """Repeated assembly with the engine's grid and configured loss model"""
    cfg = engine.config
    coordinator = AssemblyCoordinator(
        engine.geom,
        cfg.pattern() if pattern is None else pattern,
        p_load=cfg.load_probability,
        p_move_success=cfg.move_success_probability,
        retention=cfg.retention_probability,
        blocking_radius=cfg.blocking_radius,
        max_rounds=cfg.max_rounds if max_rounds is None else max_rounds,
    )
    rng = rng if rng is not None else stream(cfg.master_seed, StreamKind.ASSEMBLY)
    return coordinator.run(cfg.assembly_cycles if n_cycles is None else n_cycles, rng)
