"""Shot-level simulation of the measurement cycle: loading, state
preparation, Ramsey sequence, pushout and fluorescence detection.

Every key (array site or probe position) owns one random stream derived
from the master seed; row k of that stream belongs to cycle k, so a
dataset never depends on how keys are split across workers.
"""
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import SensorSystemConfig, experiment_dict
from src.sensor.index import check_memory, resolve_jobs, run_parallel, split_chunks
from src.sensor.libs.fields import FieldScene, axial_shift, effective_field_magnitude, field_at
from src.sensor.libs.physics import (
    TWO_PI,
    AtomicConstants,
    RamseyParams,
    SensorStates,
    effective_detuning,
    ramsey_down_probability,
)
from src.sensor.libs.records import Dataset, ShotRecord
from src.sensor.libs.tweezer_array import (
    GridGeometry,
    Occupancy,
    SiteProperties,
    SteerableTweezer,
    draw_site_properties,
    localization_sigma,
)
from src.utils.logger import logger
from src.utils.rng import StreamKind, stream

# uniforms per shot: load, prepare, ramsey outcome, survival, detection
_U_LOAD, _U_PREP, _U_RAMSEY, _U_SURVIVE, _U_DETECT = range(5)
_BYTES_PER_SHOT = 48


@dataclass(frozen=True)
class PrepModel:
    p_prepare_up: float = 0.30
    residual_down_population: float = 0.0

    def __post_init__(self):
        for name in ("p_prepare_up", "residual_down_population"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.p_prepare_up + self.residual_down_population > 1.0:
            raise ValueError("preparation probabilities exceed 1")


@dataclass
class CyclePlan:
    """Which T and which field state each cycle uses"""

    t_values: np.ndarray
    repetitions: int
    master_seed: int
    order_seed: int = 55
    interleave_test_field: bool = True

    def __post_init__(self):
        self.t_values = np.sort(np.asarray(self.t_values, dtype=float))
        if len(self.t_values) == 0 or np.any(self.t_values <= 0):
            raise ValueError("t_values must be non-empty and strictly positive")
        if self.repetitions < 0:
            raise ValueError("repetitions must be >= 0")

    @classmethod
    def from_config(cls, cfg: SensorSystemConfig) -> "CyclePlan":
        return cls(
            t_values=cfg.t_values(),
            repetitions=cfg.repetitions_per_state(),
            master_seed=cfg.master_seed,
            order_seed=cfg.order_seed,
            interleave_test_field=cfg.interleave_test_field,
        )

    @property
    def n_cycles(self) -> int:
        return 2 * len(self.t_values) * self.repetitions

    def schedule(self) -> Tuple[np.ndarray, np.ndarray]:
        """(T index, test_on) per cycle, in execution order"""
        entries = np.repeat(np.arange(len(self.t_values)), self.repetitions)
        order = stream(self.master_seed, StreamKind.ORDER, self.order_seed).permutation(len(entries))
        shuffled = entries[order]
        if self.interleave_test_field:
            t_index = np.repeat(shuffled, 2)
            test_on = np.tile(np.array([True, False]), len(shuffled))
        else:
            t_index = np.concatenate([shuffled, shuffled])
            test_on = np.repeat(np.array([True, False]), len(shuffled))
        return t_index, test_on


def resolve_shots(
    u: np.ndarray,
    p_down: np.ndarray,
    occupied: np.ndarray,
    prep: PrepModel,
    true_positive,
    false_positive,
    survival,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Turn uniforms into outcomes for a batch of shots.

    `u` has columns (prepare, ramsey, survive, detect). Atoms left outside
    the sensor pair are cleared by the pushout, as are atoms ending in |up>.
    Returns (prepared_up, final_down, detected).
    """
    up = occupied & (u[..., 0] < prep.p_prepare_up)
    start_down = occupied & ~up & (u[..., 0] < prep.p_prepare_up + prep.residual_down_population)

    # unitarity: from |down> the atom stays in |down> with 1 - P(up -> down)
    p_final = np.where(up, p_down, np.where(start_down, 1.0 - p_down, 0.0))
    final_down = (up | start_down) & (u[..., 1] < p_final)
    kept = final_down & (u[..., 2] < survival)
    detected = u[..., 3] < np.where(kept, true_positive, false_positive)
    return up, final_down, detected


def run_cycle(
    scene: FieldScene,
    grid: GridGeometry,
    site_props: SiteProperties,
    prep: PrepModel,
    ramsey: RamseyParams,
    T: float,
    test_on: bool,
    rng: np.random.Generator,
    p_load: float = 0.5,
    occupancy: Optional[Occupancy] = None,
    states: Optional[SensorStates] = None,
    constants: Optional[AtomicConstants] = None,
    cycle_id: int = 0,
) -> List[ShotRecord]:
    """One measurement cycle over the whole grid; one record per site"""
    states = states or SensorStates.default()
    constants = constants or AtomicConstants.rb85()
    n = grid.n_sites
    u = rng.random((n, 5))
    occupied = occupancy.sites.copy() if occupancy is not None else u[:, _U_LOAD] < p_load

    B = effective_field_magnitude(scene.with_test(scene.test.enabled and test_on), grid.positions())
    delta = effective_detuning(ramsey.two_photon_difference, B, site_props.light_shift_offset, states, constants)
    p_down = ramsey_down_probability(delta, T, ramsey)

    prepared, final_down, detected = resolve_shots(
        u[:, _U_PREP:], p_down, occupied, prep,
        site_props.detection_true_positive,
        site_props.detection_false_positive,
        site_props.survival_probability,
    )
    return [
        ShotRecord(
            cycle=cycle_id,
            key=site,
            t_seconds=float(T),
            test_on=bool(test_on),
            occupied_before=bool(occupied[site]),
            detected_after=bool(detected[site]),
            prepared=bool(prepared[site]),
            final_down=bool(final_down[site]),
        )
        for site in range(n)
    ]


@dataclass
class _KeyBatch:
    """Everything a worker needs to simulate a set of keys"""
    kind: StreamKind
    positions: np.ndarray
    props: SiteProperties
    p_load: float
    jitter_sigma: float
    t_index: np.ndarray
    test_on: np.ndarray
    t_values: np.ndarray
    cycle_ids: np.ndarray


class ExperimentEngine:
    """Simulates full experiments and scanning-probe runs from one config"""

    def __init__(self, cfg: SensorSystemConfig):
        self.config = cfg
        self.geom = cfg.geometry()
        self.scene = cfg.scene()
        self.states = cfg.states()
        self.constants = cfg.constants()
        self.ramsey = cfg.ramsey_params()
        self.prep = PrepModel(cfg.prepare_up_probability, cfg.residual_down_probability)
        self.site_props = draw_site_properties(
            self.geom,
            TWO_PI * cfg.light_shift_mean,
            TWO_PI * cfg.light_shift_spread,
            stream(cfg.master_seed, StreamKind.SITE_PROPERTIES),
            true_positive=cfg.detection_true_positive,
            false_positive=cfg.detection_false_positive,
            survival=cfg.survival_probability,
        )
        self.tweezer = SteerableTweezer.for_grid(
            self.geom, window=cfg.probe_window, waist=cfg.probe_waist, step_resolution=cfg.probe_step
        )
        self._scene_on = self.scene.with_test(self.scene.test.enabled)
        self._scene_off = self.scene.with_test(False)
        self._drift_axis = np.asarray(self.scene.quantization.axis)

    @classmethod
    def from_config(cls, cfg: SensorSystemConfig) -> "ExperimentEngine":
        return cls(cfg)

    def _jitter_sigma(self, waist: float) -> float:
        if not self.config.position_jitter:
            return 0.0
        return localization_sigma(self.config.atom_temperature, self.config.trap_depth_sensing, waist)

    # ==================== SIMULATION CORE ====================

    def _simulate_keys(self, batch: _KeyBatch, keys: Sequence[int]) -> Dict[str, np.ndarray]:
        n_cycles = len(batch.t_index)
        out = {
            name: np.zeros((n_cycles, len(keys)), dtype=bool)
            for name in ("occupied", "prepared", "final_down", "detected")
        }
        t_per_cycle = batch.t_values[batch.t_index]
        drift = self.config.drift_per_cycle * batch.cycle_ids[:, None] * self._drift_axis

        for j, key in enumerate(keys):
            rng = stream(self.config.master_seed, batch.kind, key)
            u = rng.random((n_cycles, 5))
            points = np.broadcast_to(batch.positions[key], (n_cycles, 2))
            if batch.jitter_sigma > 0:
                points = points + batch.jitter_sigma * rng.standard_normal((n_cycles, 2))

            vectors = np.where(
                batch.test_on[:, None], field_at(self._scene_on, points), field_at(self._scene_off, points)
            ) + drift
            delta = effective_detuning(
                self.ramsey.two_photon_difference,
                np.linalg.norm(vectors, axis=-1),
                batch.props.light_shift_offset[key],
                self.states,
                self.constants,
            )
            p_down = ramsey_down_probability(delta, t_per_cycle, self.ramsey)

            occupied = u[:, _U_LOAD] < batch.p_load
            prepared, final_down, detected = resolve_shots(
                u[:, _U_PREP:], p_down, occupied, self.prep,
                batch.props.detection_true_positive[key],
                batch.props.detection_false_positive[key],
                batch.props.survival_probability[key],
            )
            out["occupied"][:, j] = occupied
            out["prepared"][:, j] = prepared
            out["final_down"][:, j] = final_down
            out["detected"][:, j] = detected
        return out

    def _run_keys(self, batch: _KeyBatch, n_keys: int, jobs: Optional[int]) -> Dict[str, np.ndarray]:
        n_cycles = len(batch.t_index)
        check_memory(n_cycles * n_keys * _BYTES_PER_SHOT, "dataset")
        jobs = resolve_jobs(jobs)
        chunks = split_chunks(list(range(n_keys)), jobs)
        results = run_parallel(partial(self._simulate_keys, batch), chunks, jobs)
        if not results:
            return {name: np.zeros((n_cycles, 0), dtype=bool) for name in ("occupied", "prepared", "final_down", "detected")}
        return {name: np.concatenate([r[name] for r in results], axis=1) for name in results[0]}

    def _truth(self, positions: np.ndarray, light_shift: np.ndarray) -> Dict[str, np.ndarray]:
        B_on = effective_field_magnitude(self._scene_on, positions)
        B_off = effective_field_magnitude(self._scene_off, positions)
        delta_on = effective_detuning(self.ramsey.two_photon_difference, B_on, light_shift, self.states, self.constants)
        delta_off = effective_detuning(self.ramsey.two_photon_difference, B_off, light_shift, self.states, self.constants)
        return {
            "light_shift": np.asarray(light_shift, dtype=float),
            "delta_on": delta_on,
            "delta_off": delta_off,
            "delta_b": B_on - B_off,
            "axial_shift": axial_shift(self._scene_on, positions),
        }

    def _metadata(self, plan: CyclePlan, n_cycles: int) -> Dict[str, object]:
        cfg = self.config
        return {
            "n_cycles": n_cycles,
            "repetitions": plan.repetitions,
            "t_steps": len(plan.t_values),
            "interleaved": plan.interleave_test_field,
            "exposure_time_s": cfg.exposure_time,
            "trap_depth_imaging_K": cfg.trap_depth_imaging,
            "trap_depth_sensing_K": cfg.trap_depth_sensing,
            "cycle_rate_hz": cfg.cycle_rate,
            "sensor_pair": cfg.sensor_pair,
        }

    # ==================== PUBLIC RUNS ====================

    def run_cycle(
        self, T: float, test_on: bool, rng: np.random.Generator, occupancy: Optional[Occupancy] = None, cycle_id: int = 0
    ) -> List[ShotRecord]:
        return run_cycle(
            self.scene, self.geom, self.site_props, self.prep, self.ramsey, T, test_on, rng,
            p_load=self.config.load_probability, occupancy=occupancy,
            states=self.states, constants=self.constants, cycle_id=cycle_id,
        )

    def run_experiment(
        self, plan: Optional[CyclePlan] = None, jobs: Optional[int] = None, diagnostic: Optional[bool] = None
    ) -> Dataset:
        """All sites, all cycles; rows ordered by (cycle, site)"""
        plan = plan or CyclePlan.from_config(self.config)
        diagnostic = self.config.diagnostic_truth if diagnostic is None else diagnostic
        t_index, test_on = plan.schedule()
        n_cycles, n_sites = len(t_index), self.geom.n_sites
        logger.info(f"Running experiment: {n_sites} sites x {n_cycles} cycles (seed {plan.master_seed})")

        positions = self.geom.positions()
        batch = _KeyBatch(
            kind=StreamKind.SITE,
            positions=positions,
            props=self.site_props,
            p_load=self.config.load_probability,
            jitter_sigma=self._jitter_sigma(self.config.array_waist),
            t_index=t_index,
            test_on=test_on,
            t_values=plan.t_values,
            cycle_ids=np.arange(n_cycles),
        )
        shots = self._run_keys(batch, n_sites, jobs)

        rows, cols = np.divmod(np.arange(n_sites), self.geom.cols)
        dataset = Dataset(
            mode="array",
            cycle=np.repeat(np.arange(n_cycles, dtype=np.int64), n_sites),
            key=np.tile(np.arange(n_sites, dtype=np.int64), n_cycles),
            t_seconds=np.repeat(plan.t_values[t_index], n_sites),
            test_on=np.repeat(test_on, n_sites),
            occupied=shots["occupied"].ravel(),
            detected=shots["detected"].ravel(),
            positions=positions,
            rows=rows,
            cols=cols,
            prepared=shots["prepared"].ravel() if diagnostic else None,
            final_down=shots["final_down"].ravel() if diagnostic else None,
            truth=self._truth(positions, self.site_props.light_shift_offset) if diagnostic else {},
            metadata=self._metadata(plan, n_cycles),
            config=experiment_dict(self.config),
        )
        logger.info(f"Experiment finished: {len(dataset)} shot records, {int(dataset.detected.sum())} detections")
        return dataset

    def scanning_probe_run(
        self,
        positions: Sequence[Sequence[float]],
        plan: Optional[CyclePlan] = None,
        jobs: Optional[int] = None,
        diagnostic: Optional[bool] = None,
    ) -> Dataset:
        """One steerable probe atom per cycle at each position; rows ordered by cycle"""
        plan = plan or CyclePlan.from_config(self.config)
        diagnostic = self.config.diagnostic_truth if diagnostic is None else diagnostic
        snapped = np.array([self.tweezer.move_to(p) for p in positions], dtype=float).reshape(-1, 2)
        t_index, test_on = plan.schedule()
        n_cycles, n_probes = len(t_index), len(snapped)
        logger.info(f"Running scanning probe: {n_probes} positions x {n_cycles} cycles")

        cfg = self.config
        light_shift = TWO_PI * (cfg.light_shift_mean if cfg.probe_light_shift is None else cfg.probe_light_shift)
        props = SiteProperties(
            light_shift_offset=np.full(n_probes, light_shift),
            detection_true_positive=np.full(n_probes, cfg.detection_true_positive),
            detection_false_positive=np.full(n_probes, cfg.detection_false_positive),
            survival_probability=np.full(n_probes, cfg.survival_probability),
        )
        batch = _KeyBatch(
            kind=StreamKind.PROBE,
            positions=snapped,
            props=props,
            p_load=cfg.probe_load_probability,
            jitter_sigma=self._jitter_sigma(cfg.probe_waist),
            t_index=t_index,
            test_on=test_on,
            t_values=plan.t_values,
            cycle_ids=np.arange(n_cycles),
        )
        shots = self._run_keys(batch, n_probes, jobs)

        # probe p runs cycles p*n_cycles ... (p+1)*n_cycles - 1
        rows, cols = self._grid_sites_of(snapped)
        dataset = Dataset(
            mode="scan",
            cycle=np.arange(n_probes * n_cycles, dtype=np.int64),
            key=np.repeat(np.arange(n_probes, dtype=np.int64), n_cycles),
            t_seconds=np.tile(plan.t_values[t_index], n_probes),
            test_on=np.tile(test_on, n_probes),
            occupied=shots["occupied"].T.ravel(),
            detected=shots["detected"].T.ravel(),
            positions=snapped,
            rows=rows,
            cols=cols,
            prepared=shots["prepared"].T.ravel() if diagnostic else None,
            final_down=shots["final_down"].T.ravel() if diagnostic else None,
            truth=self._truth(snapped, props.light_shift_offset) if diagnostic and n_probes else {},
            metadata=self._metadata(plan, n_cycles),
            config=experiment_dict(cfg),
        )
        return dataset

    def _grid_sites_of(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Grid (row, col) of positions sitting on a site, -1 elsewhere"""
        if len(points) == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        rel = (points - np.asarray(self.geom.origin)) / self.geom.pitch
        idx = np.rint(rel).astype(np.int64)
        on_site = (
            np.all(np.abs(rel - idx) < 1e-6, axis=1)
            & (idx[:, 0] >= 0) & (idx[:, 0] < self.geom.cols)
            & (idx[:, 1] >= 0) & (idx[:, 1] < self.geom.rows)
        )
        return np.where(on_site, idx[:, 1], -1), np.where(on_site, idx[:, 0], -1)
