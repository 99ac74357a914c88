from dataclasses import dataclass, field
from functools import partial
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.analysis.fringe import FitStatus, FringeFit, fit_fringe
from src.sensor.index import resolve_jobs, run_parallel, split_chunks
from src.sensor.libs.physics import REFERENCE_DETUNING_SLOPE, STRETCH_SUSCEPTIBILITY_FACTOR, TWO_PI
from src.sensor.libs.records import Dataset
from src.utils.errors import DataError, EstimationError
from src.utils.logger import logger

UM = 1e-6


# ==================== CONVERSIONS ====================

def delta_omega(fit_on: FringeFit, fit_off: FringeFit) -> Tuple[float, float]:
    """(omega_on - omega_off, quadrature sigma)"""
    if not (fit_on.converged and fit_off.converged):
        raise EstimationError(
            f"frequency difference needs two converged fits (on: {fit_on.status.value}, off: {fit_off.status.value})"
        )
    return fit_on.omega - fit_off.omega, float(np.hypot(fit_on.sigma_omega, fit_off.sigma_omega))


def omega_to_delta_b(d_omega, slope: float = REFERENCE_DETUNING_SLOPE):
    """Field change producing a Ramsey frequency change d_omega; `slope` in rad/s per tesla"""
    return np.asarray(d_omega, dtype=float) / slope if np.ndim(d_omega) else float(d_omega) / slope


def conversion_slope(cfg: Optional[Dict[str, Any]]) -> float:
    """d(delta_eff)/dB used for the conversion, including the stretch-pair factor"""
    if not cfg:
        return REFERENCE_DETUNING_SLOPE
    slope = TWO_PI * float(cfg.get("detuning_slope", REFERENCE_DETUNING_SLOPE / TWO_PI))
    if cfg.get("sensor_pair") == "stretch":
        slope *= float(cfg.get("stretch_factor", STRETCH_SUSCEPTIBILITY_FACTOR))
    return slope


# ==================== FIELD MAP ====================

@dataclass(frozen=True)
class SiteEstimate:
    key: int
    row: int
    col: int
    position: Tuple[float, float]
    fit_on: FringeFit
    fit_off: FringeFit
    delta_omega: float
    sigma_delta_omega: float
    delta_b: float
    sigma_delta_b: float
    coherent_time: float  # seconds, mean over the two field states
    prepared_events: float
    flag: str = "ok"

    @property
    def converged(self) -> bool:
        return self.flag in ("ok", "ambiguous")


@dataclass
class FieldMap:
    """Per-key field estimates; failed keys stay in the map with a flag"""
    mode: str
    sites: List[SiteEstimate]
    slope: float
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.sites)

    def converged_sites(self) -> List[SiteEstimate]:
        return [s for s in self.sites if s.converged]

    def row(self, row: int) -> List[SiteEstimate]:
        return [s for s in self.sites if s.row == row]

    @property
    def rows(self) -> List[int]:
        return sorted({s.row for s in self.sites if s.row >= 0})

    def arrays(self, converged_only: bool = True) -> Dict[str, np.ndarray]:
        sites = self.converged_sites() if converged_only else self.sites
        return {
            "x": np.array([s.position[0] for s in sites], dtype=float),
            "y": np.array([s.position[1] for s in sites], dtype=float),
            "delta_b": np.array([s.delta_b for s in sites], dtype=float),
            "sigma_delta_b": np.array([s.sigma_delta_b for s in sites], dtype=float),
        }


def group_counts(dataset: Dataset) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Occupied and detected counts per (key, test_on, T index), plus the T grid"""
    if len(dataset) == 0:
        raise DataError("dataset holds no shot records")
    t_grid, t_index = np.unique(dataset.t_seconds, return_inverse=True)
    shape = (dataset.n_keys, 2, len(t_grid))
    index = (dataset.key, dataset.test_on.astype(np.int64), t_index)
    occupied = np.zeros(shape, dtype=np.int64)
    detected = np.zeros(shape, dtype=np.int64)
    np.add.at(occupied, index, dataset.occupied.astype(np.int64))
    np.add.at(detected, index, dataset.detected.astype(np.int64))
    return occupied, detected, t_grid


def coherent_times(dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sum of T over prepared events and the prepared-event count per key,
    each averaged over the two field states.

    Without the diagnostic prepared column, every occupied shot counts
    with the configured preparation probability.
    """
    if dataset.prepared is not None:
        weight = dataset.prepared.astype(float)
    else:
        p_prepare = float((dataset.config or {}).get("prepare_up_probability", 0.30))
        weight = dataset.occupied.astype(float) * p_prepare
    index = (dataset.key, dataset.test_on.astype(np.int64))
    t_sum = np.zeros((dataset.n_keys, 2))
    events = np.zeros((dataset.n_keys, 2))
    np.add.at(t_sum, index, weight * dataset.t_seconds)
    np.add.at(events, index, weight)
    return t_sum.mean(axis=1), events.mean(axis=1)


def _fit_keys(
    counts: Tuple[np.ndarray, np.ndarray, np.ndarray], options: Dict[str, Any], keys: Sequence[int]
) -> List[Tuple[FringeFit, FringeFit]]:
    occupied, detected, t_grid = counts
    return [
        (
            fit_fringe(t_grid, occupied[k, 1], detected[k, 1], **options),
            fit_fringe(t_grid, occupied[k, 0], detected[k, 0], **options),
        )
        for k in keys
    ]


def build_field_map(
    dataset: Dataset,
    jobs: Optional[int] = None,
    *,
    slope: Optional[float] = None,
    min_t_values: Optional[int] = None,
    min_peak_power: Optional[float] = None,
    nyquist_guard: Optional[float] = None,
) -> FieldMap:
    """Fit both field states of every key and convert the frequency shift to a field change"""
    cfg = dataset.config or {}
    slope = conversion_slope(cfg) if slope is None else slope
    options = {
        "min_t_values": int(cfg.get("min_t_values", 8)) if min_t_values is None else min_t_values,
        "min_peak_power": float(cfg.get("min_peak_power", 0.25)) if min_peak_power is None else min_peak_power,
        "nyquist_guard": float(cfg.get("nyquist_guard", 0.05)) if nyquist_guard is None else nyquist_guard,
    }
    if not (dataset.test_on.any() and (~dataset.test_on).any()):
        raise DataError("dataset must contain both test-on and test-off cycles")

    counts = group_counts(dataset)
    jobs = resolve_jobs(jobs)
    chunks = split_chunks(list(range(dataset.n_keys)), jobs)
    fits = [pair for chunk in run_parallel(partial(_fit_keys, counts, options), chunks, jobs) for pair in chunk]
    t_coherent, prepared_events = coherent_times(dataset)

    sites = []
    for key, (fit_on, fit_off) in enumerate(fits):
        if fit_on.converged and fit_off.converged:
            d_omega, sigma = delta_omega(fit_on, fit_off)
            flag = "ambiguous" if (fit_on.ambiguous or fit_off.ambiguous) else "ok"
        else:
            d_omega = sigma = float("nan")
            failed = fit_on if not fit_on.converged else fit_off
            flag = f"{'on' if failed is fit_on else 'off'}:{failed.status.value}"
            logger.warning(f"Key {key}: fit failed ({flag})")
        sites.append(
            SiteEstimate(
                key=key,
                row=int(dataset.rows[key]),
                col=int(dataset.cols[key]),
                position=(float(dataset.positions[key][0]), float(dataset.positions[key][1])),
                fit_on=fit_on,
                fit_off=fit_off,
                delta_omega=d_omega,
                sigma_delta_omega=sigma,
                delta_b=omega_to_delta_b(d_omega, slope),
                sigma_delta_b=abs(omega_to_delta_b(sigma, slope)),
                coherent_time=float(t_coherent[key]),
                prepared_events=float(prepared_events[key]),
                flag=flag,
            )
        )

    field_map = FieldMap(mode=dataset.mode, sites=sites, slope=slope, metadata=dict(dataset.metadata))
    logger.info(f"Field map: {len(field_map.converged_sites())}/{len(sites)} keys converged")
    return field_map


# ==================== GRADIENTS ====================

@dataclass(frozen=True)
class GradientFit:
    slope: float  # T/m
    intercept: float  # T at x = 0 (and y = 0 for the plane)
    sigma_slope: float
    sigma_intercept: float
    label: str
    n_sites: int
    chi2_red: float
    slope_y: float = float("nan")
    sigma_slope_y: float = float("nan")


def fit_line(sites: Sequence[SiteEstimate], label: str) -> GradientFit:
    """Weighted straight line of delta_b against x"""
    if len(sites) < 3:
        raise EstimationError(f"{label}: need at least 3 converged sites, got {len(sites)}")
    x = np.array([s.position[0] for s in sites])
    y = np.array([s.delta_b for s in sites])
    sigma = np.array([s.sigma_delta_b for s in sites])
    if np.ptp(x) == 0:
        raise EstimationError(f"{label}: all sites share one x position")

    (slope, intercept), cov = np.polyfit(x, y, 1, w=1.0 / sigma, cov="unscaled")
    chi2 = float(np.sum(((y - (slope * x + intercept)) / sigma) ** 2))
    fit = GradientFit(
        slope=float(slope),
        intercept=float(intercept),
        sigma_slope=float(np.sqrt(cov[0, 0])),
        sigma_intercept=float(np.sqrt(cov[1, 1])),
        label=label,
        n_sites=len(sites),
        chi2_red=chi2 / max(1, len(sites) - 2),
    )
    logger.debug(f"{label}: slope {fit.slope * 1e3:.3f} +/- {fit.sigma_slope * 1e3:.3f} nT/um")
    return fit


def fit_row_gradient(field_map: FieldMap, row: int) -> GradientFit:
    return fit_line([s for s in field_map.row(row) if s.converged], f"row {row}")


def fit_scan_gradient(field_map: FieldMap) -> GradientFit:
    """Line through all converged probe positions"""
    return fit_line(field_map.converged_sites(), "scan")


def fit_plane(field_map: FieldMap) -> GradientFit:
    """delta_b = c + gx*x + gy*y from the weighted normal equations"""
    sites = field_map.converged_sites()
    if len(sites) < 4:
        raise EstimationError(f"plane: need at least 4 converged sites, got {len(sites)}")
    data = field_map.arrays()
    # positions in micrometres keep the normal equations well conditioned
    design = np.stack([np.ones_like(data["x"]), data["x"] / UM, data["y"] / UM], axis=1)
    w = 1.0 / data["sigma_delta_b"] ** 2
    normal = design.T @ (design * w[:, None])
    try:
        cov = np.linalg.inv(normal)
    except np.linalg.LinAlgError:
        raise EstimationError("plane: sites do not span a plane")
    beta = cov @ (design.T @ (w * data["delta_b"]))
    chi2 = float(np.sum(w * (data["delta_b"] - design @ beta) ** 2))
    return GradientFit(
        slope=float(beta[1] / UM),
        intercept=float(beta[0]),
        sigma_slope=float(np.sqrt(cov[1, 1]) / UM),
        sigma_intercept=float(np.sqrt(cov[0, 0])),
        label="plane",
        n_sites=len(sites),
        chi2_red=chi2 / max(1, len(sites) - 3),
        slope_y=float(beta[2] / UM),
        sigma_slope_y=float(np.sqrt(cov[2, 2]) / UM),
    )


@dataclass(frozen=True)
class RowGradientSummary:
    mean: float
    standard_error: float
    spread: float
    fits: List[GradientFit]


def mean_row_gradient(field_map: FieldMap) -> RowGradientSummary:
    """Mean of the per-row slopes; rows with too few converged sites are skipped"""
    fits = []
    for row in field_map.rows:
        try:
            fits.append(fit_row_gradient(field_map, row))
        except EstimationError as e:
            logger.warning(f"Skipping {e}")
    if not fits:
        raise EstimationError("no row has enough converged sites for a gradient")
    slopes = np.array([f.slope for f in fits])
    spread = float(slopes.std(ddof=1)) if len(slopes) > 1 else 0.0
    return RowGradientSummary(
        mean=float(slopes.mean()),
        standard_error=spread / np.sqrt(len(slopes)),
        spread=spread,
        fits=fits,
    )


def resolution(field_map: FieldMap) -> Tuple[float, float]:
    """Mean sigma_delta_b over converged keys and its inter-site spread"""
    sigmas = np.array([s.sigma_delta_b for s in field_map.converged_sites()])
    if len(sigmas) == 0:
        raise EstimationError("no converged sites in the field map")
    return float(sigmas.mean()), float(sigmas.std())
