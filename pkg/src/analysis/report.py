from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from src.analysis.field_map import FieldMap, GradientFit, RowGradientSummary, resolution
from src.sensor.libs.physics import STRETCH_SUSCEPTIBILITY_FACTOR
from src.utils.errors import EstimationError

REPORT_VERSION = 1


@dataclass(frozen=True)
class SensitivityReport:
    delta_b: float  # T
    delta_b_spread: float  # T
    coherent_time: float  # s
    sensitivity: float  # T / sqrt(Hz)
    events: float
    stretch_delta_b: float
    stretch_sensitivity: float
    lab_delta_b: float
    lab_stretch_delta_b: float
    lab_time: float  # s
    cycle_rate: float  # Hz


def lab_time_projection(
    delta_b: float,
    events_per_state: float,
    cycle_rate: float = 10.0,
    integration_time: float = 3600.0,
    prepare_up_probability: float = 0.30,
    pattern_fill: float = 1.0,
    stretch_factor: Optional[float] = None,
) -> float:
    """
    Resolution after `integration_time` of lab running at `cycle_rate`.

    Assumes a calibrated reference frequency (one fit instead of two, so
    the difference noise loses its sqrt(2)) and a pattern site that holds
    an atom with probability `pattern_fill` every cycle. Projection noise
    scales with the inverse square root of the event count.
    """
    lab_events = cycle_rate * integration_time * pattern_fill * prepare_up_probability
    if lab_events <= 0 or events_per_state <= 0:
        raise EstimationError("lab-time projection needs a positive event count")
    projected = delta_b / np.sqrt(2.0) * np.sqrt(events_per_state / lab_events)
    return float(projected / stretch_factor if stretch_factor else projected)


def sensitivity(
    source: Union[FieldMap, Sequence[float]],
    delta_b: Optional[float] = None,
    *,
    stretch_factor: float = STRETCH_SUSCEPTIBILITY_FACTOR,
    cycle_rate: float = 10.0,
    integration_time: float = 3600.0,
    prepare_up_probability: float = 0.30,
    pattern_fill: float = 1.0,
) -> SensitivityReport:
    """
    delta_b * sqrt(total coherent time).

    `source` is either a field map (delta_b defaults to its resolution and
    the coherent time to the mean per-site value) or the T values of the
    contributing events, in which case `delta_b` is required.
    """
    spread = 0.0
    if isinstance(source, FieldMap):
        sites = source.converged_sites()
        if delta_b is None:
            delta_b, spread = resolution(source)
        coherent_time = float(np.mean([s.coherent_time for s in sites])) if sites else 0.0
        events = float(np.mean([s.prepared_events for s in sites])) if sites else 0.0
        already_stretched = source.metadata.get("sensor_pair") == "stretch"
    else:
        t = np.asarray(list(source), dtype=float)
        if delta_b is None:
            raise EstimationError("delta_b is required for an event list")
        coherent_time, events = float(t.sum()), float(len(t))
        already_stretched = False

    if events <= 0 or coherent_time <= 0:
        raise EstimationError("no contributing events")

    factor = 1.0 if already_stretched else stretch_factor
    stretch_delta_b = delta_b / factor
    root_time = np.sqrt(coherent_time)
    return SensitivityReport(
        delta_b=float(delta_b),
        delta_b_spread=float(spread),
        coherent_time=coherent_time,
        sensitivity=float(delta_b * root_time),
        events=events,
        stretch_delta_b=float(stretch_delta_b),
        stretch_sensitivity=float(stretch_delta_b * root_time),
        lab_delta_b=lab_time_projection(
            delta_b, events, cycle_rate, integration_time, prepare_up_probability, pattern_fill
        ),
        lab_stretch_delta_b=lab_time_projection(
            delta_b, events, cycle_rate, integration_time, prepare_up_probability, pattern_fill, factor
        ),
        lab_time=integration_time,
        cycle_rate=cycle_rate,
    )


# ==================== TEXT TABLES ====================

def provenance_header(kind: str, source_sha256: str, extra: Optional[dict] = None) -> List[str]:
    lines = [f"# report={kind}", f"# report_version={REPORT_VERSION}", f"# source_sha256={source_sha256}"]
    lines += [f"# {k}={v}" for k, v in (extra or {}).items()]
    return lines


def field_map_table(field_map: FieldMap, source_sha256: str) -> str:
    lines = provenance_header("field_map", source_sha256, {"mode": field_map.mode, "units": "SI (m, rad/s, T, s)"})
    lines.append(
        "key row col x y omega_on sigma_on omega_off sigma_off delta_b sigma_delta_b coherent_time flag"
    )
    for s in field_map.sites:
        values = (
            s.position[0], s.position[1],
            s.fit_on.omega, s.fit_on.sigma_omega, s.fit_off.omega, s.fit_off.sigma_omega,
            s.delta_b, s.sigma_delta_b, s.coherent_time,
        )
        lines.append(f"{s.key} {s.row} {s.col} " + " ".join(f"{v:.9e}" for v in values) + f" {s.flag}")
    return "\n".join(lines) + "\n"


def gradient_table(fits: Iterable[GradientFit], source_sha256: str) -> str:
    lines = provenance_header("gradients", source_sha256, {"units": "slope T/m, intercept T"})
    lines.append("label n_sites slope sigma_slope intercept sigma_intercept chi2_red slope_y sigma_slope_y")
    for f in fits:
        values = (f.slope, f.sigma_slope, f.intercept, f.sigma_intercept, f.chi2_red, f.slope_y, f.sigma_slope_y)
        lines.append(f"{f.label.replace(' ', '_')} {f.n_sites} " + " ".join(f"{v:.9e}" for v in values))
    return "\n".join(lines) + "\n"


def summary_report(
    field_map: FieldMap,
    source_sha256: str,
    rows: Optional[RowGradientSummary] = None,
    plane: Optional[GradientFit] = None,
    report: Optional[SensitivityReport] = None,
    scan: Optional[GradientFit] = None,
) -> str:
    """Human-readable summary in micro-scale units"""
    converged = field_map.converged_sites()
    lines = provenance_header("summary", source_sha256)
    lines.append(f"keys={len(field_map)} converged={len(converged)}")
    flagged = [s for s in field_map.sites if s.flag != "ok"]
    if flagged:
        lines.append("flagged=" + ",".join(f"{s.key}:{s.flag}" for s in flagged))
    if rows is not None:
        lines.append(
            f"mean_row_gradient_nT_per_um={rows.mean * 1e3:.3f} +/- {rows.standard_error * 1e3:.3f} "
            f"(spread {rows.spread * 1e3:.3f}, rows {len(rows.fits)})"
        )
        for f in rows.fits:
            lines.append(f"  {f.label}: {f.slope * 1e3:.3f} +/- {f.sigma_slope * 1e3:.3f} nT/um")
    if plane is not None:
        lines.append(
            f"plane_gradient_nT_per_um x={plane.slope * 1e3:.3f} +/- {plane.sigma_slope * 1e3:.3f} "
            f"y={plane.slope_y * 1e3:.3f} +/- {plane.sigma_slope_y * 1e3:.3f}"
        )
    if scan is not None:
        lines.append(f"scan_gradient_nT_per_um={scan.slope * 1e3:.3f} +/- {scan.sigma_slope * 1e3:.3f}")
    if report is not None:
        lines += [
            f"resolution_nT={report.delta_b * 1e9:.2f} (spread {report.delta_b_spread * 1e9:.2f})",
            f"coherent_time_ms={report.coherent_time * 1e3:.3f} events={report.events:.1f}",
            f"sensitivity_nT_per_rtHz={report.sensitivity * 1e9:.2f}",
            f"stretch_resolution_nT={report.stretch_delta_b * 1e9:.2f}",
            f"stretch_sensitivity_nT_per_rtHz={report.stretch_sensitivity * 1e9:.2f}",
            f"lab_projection_{report.lab_time:.0f}s_at_{report.cycle_rate:g}Hz_nT={report.lab_delta_b * 1e9:.2f} "
            f"stretch={report.lab_stretch_delta_b * 1e9:.2f}",
        ]
    return "\n".join(lines) + "\n"
