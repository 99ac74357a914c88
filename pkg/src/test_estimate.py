import numpy as np
import pytest

from src.analysis.field_map import (
    FieldMap,
    SiteEstimate,
    build_field_map,
    delta_omega,
    fit_line,
    fit_plane,
    fit_row_gradient,
    fit_scan_gradient,
    mean_row_gradient,
    omega_to_delta_b,
    resolution,
)
from src.analysis.fringe import (
    FitStatus,
    FringeFit,
    fit_fringe,
    fit_fringe_curve,
    is_physical,
    lowest_frequency,
    nyquist_edge,
)
from src.analysis.report import lab_time_projection, sensitivity
from src.config import SensorSystemConfig
from src.sensor.engine import ExperimentEngine
from src.sensor.libs.physics import REFERENCE_DETUNING_SLOPE, TWO_PI
from src.utils.errors import DataError, EstimationError

UM = 1e-6
GRADIENT = 77.3e-3
T_GRID = np.linspace(2e-6, 110e-6, 55)


def converged_fit(omega, sigma):
    return FringeFit(omega, sigma, 0.15, 0.08, 0.0, 700, 1.0, FitStatus.CONVERGED)


def site(key, x, y, delta_b, sigma=98e-9, row=0, col=0):
    fit = converged_fit(TWO_PI * 38.7e3, TWO_PI * 640.0)
    return SiteEstimate(
        key=key, row=row, col=col, position=(x, y), fit_on=fit, fit_off=fit,
        delta_omega=delta_b * REFERENCE_DETUNING_SLOPE, sigma_delta_omega=sigma * REFERENCE_DETUNING_SLOPE,
        delta_b=delta_b, sigma_delta_b=sigma, coherent_time=0.04, prepared_events=719.0,
    )


def synthetic_counts(rng, omega, phase=0.4, repetitions=87):
    """Binomial counts for the reference-scale fringe of one site and field state"""
    occupied = rng.binomial(repetitions, 0.5, len(T_GRID))
    p = 0.3 * 0.98 * (0.5 + 0.5 * 0.55 * np.cos(omega * T_GRID + phase))
    return occupied, rng.binomial(occupied, p)


# ==================== FRINGE FITS ====================

def test_noiseless_fringe_recovered():
    omega = TWO_PI * 38.7e3
    fit = fit_fringe_curve(T_GRID, 0.4 + 0.3 * np.cos(omega * T_GRID + 0.7))
    assert fit.converged
    assert fit.omega == pytest.approx(omega, rel=1e-9)
    assert fit.offset == pytest.approx(0.4, rel=1e-9)
    assert fit.amplitude == pytest.approx(0.3, rel=1e-9)
    assert fit.phase == pytest.approx(0.7, abs=1e-8)
    assert not fit.ambiguous


def test_noiseless_fringes_across_the_band():
    rng = np.random.default_rng(17)
    for _ in range(100):
        A, C = rng.uniform(0.3, 0.7), rng.uniform(0.05, 0.3)
        omega, phi = TWO_PI * rng.uniform(25e3, 200e3), rng.uniform(-np.pi, np.pi)
        fit = fit_fringe_curve(T_GRID, A + C * np.cos(omega * T_GRID + phi))
        assert fit.converged
        assert fit.omega == pytest.approx(omega, rel=1e-9)
        assert fit.offset == pytest.approx(A, rel=1e-8)
        assert fit.amplitude == pytest.approx(C, rel=1e-8)
        assert abs(np.angle(np.exp(1j * (fit.phase - phi)))) < 1e-7


def test_noisy_fit_uncertainty_is_calibrated():
    rng = np.random.default_rng(31)
    omega = TWO_PI * 38.7e3
    fits = [fit_fringe(T_GRID, *synthetic_counts(rng, omega)) for _ in range(500)]
    converged = [f for f in fits if f.converged]
    assert len(converged) >= 490

    estimates = np.array([f.omega for f in converged])
    sigmas = np.array([f.sigma_omega for f in converged])
    reported = sigmas.mean()
    assert sigmas.max() < TWO_PI * 2e3
    assert np.all(np.abs(estimates - omega) < TWO_PI * 5e3)
    assert all(is_physical(f) for f in converged)
    assert TWO_PI * 0.5e3 < reported < TWO_PI * 0.8e3
    assert 0.8 < estimates.std(ddof=1) / reported < 1.25
    assert abs(estimates.mean() - omega) < 5 * reported / np.sqrt(len(estimates))


def test_slow_drift_is_not_a_fringe():
    t_span = np.ptp(T_GRID)
    assert lowest_frequency(T_GRID) == pytest.approx(2 * np.pi / t_span, rel=1e-12)
    drift = 0.3 + 0.1 * np.cos(0.4 * lowest_frequency(T_GRID) * T_GRID + 0.2)
    fit = fit_fringe_curve(T_GRID, drift)
    assert not fit.converged


def test_fringe_must_be_a_fraction():
    assert is_physical(converged_fit(TWO_PI * 38.7e3, 1.0))
    runaway = FringeFit(TWO_PI * 2e3, TWO_PI * 1.9e6, 0.2, 21.0, 0.0, 700, 1.0, FitStatus.CONVERGED)
    assert not is_physical(runaway)


def test_fit_refuses_too_few_points():
    fit = fit_fringe(T_GRID[:5], np.full(5, 40), np.full(5, 6))
    assert fit.status is FitStatus.INSUFFICIENT_DATA
    assert fit.events == 200
    assert np.isnan(fit.omega)


def test_flat_data_has_no_peak():
    fit = fit_fringe(T_GRID, np.full(55, 40), np.full(55, 20))
    assert fit.status is FitStatus.NO_PEAK
    assert not fit.converged


def test_inconsistent_counts_rejected():
    with pytest.raises(ValueError):
        fit_fringe(T_GRID, np.full(55, 10), np.full(55, 11))


def test_frequency_at_the_grid_limit_is_flagged():
    assert nyquist_edge(T_GRID) == pytest.approx(np.pi / 2e-6, rel=1e-9)
    omega = 0.97 * nyquist_edge(T_GRID)
    fit = fit_fringe_curve(T_GRID, 0.5 + 0.2 * np.cos(omega * T_GRID + 0.3))
    assert fit.converged
    assert fit.ambiguous


# ==================== CONVERSIONS ====================

def test_frequency_difference():
    same = converged_fit(TWO_PI * 38.7e3, TWO_PI * 640.0)
    d, sigma = delta_omega(same, same)
    assert d == 0.0
    assert sigma == pytest.approx(TWO_PI * 0.91e3, rel=0.01)

    d, _ = delta_omega(converged_fit(TWO_PI * 45e3, 1.0), converged_fit(TWO_PI * 38.7e3, 1.0))
    assert d == pytest.approx(TWO_PI * 6.3e3, rel=1e-12)

    with pytest.raises(EstimationError):
        delta_omega(same, FringeFit.failed(FitStatus.NO_PEAK))


def test_frequency_to_field():
    assert omega_to_delta_b(0.0) == 0.0
    assert omega_to_delta_b(TWO_PI * 0.91e3) == pytest.approx(98e-9, rel=0.005)
    assert omega_to_delta_b(TWO_PI * 717.0) == pytest.approx(77.3e-9, rel=0.001)
    np.testing.assert_allclose(omega_to_delta_b(np.array([1.0, 3.0]) * 1e4), np.array([1.0, 3.0]) * 1e4 / REFERENCE_DETUNING_SLOPE)


def test_resolution_and_sensitivity_chain():
    report = sensitivity([56e-6] * 719, delta_b=98e-9)
    assert report.coherent_time == pytest.approx(40.3e-3, rel=1e-3)
    assert report.sensitivity == pytest.approx(19.7e-9, rel=0.005)
    assert report.stretch_delta_b == pytest.approx(39e-9, rel=0.01)
    assert report.lab_stretch_delta_b < 10e-9

    unit = sensitivity([1.0], delta_b=1e-9)
    assert unit.sensitivity == pytest.approx(1e-9, rel=1e-12)


def test_lab_projection():
    projected = lab_time_projection(98e-9, 719, cycle_rate=10.0, integration_time=3600.0, stretch_factor=2.5)
    assert projected == pytest.approx(7.15e-9, rel=0.01)
    assert lab_time_projection(98e-9, 719, integration_time=4 * 3600.0) == pytest.approx(
        0.5 * lab_time_projection(98e-9, 719), rel=1e-12
    )
    with pytest.raises(EstimationError):
        lab_time_projection(98e-9, 719, cycle_rate=0.0)


def test_sensitivity_needs_events():
    with pytest.raises(EstimationError):
        sensitivity([], delta_b=98e-9)
    with pytest.raises(EstimationError):
        sensitivity([56e-6])


# ==================== GRADIENTS ====================

def test_line_fit_recovers_exact_gradient():
    xs = np.arange(18) * 7 * UM
    sites = [site(k, x, 49 * UM, GRADIENT * (x - 28 * UM)) for k, x in enumerate(xs)]
    fit = fit_line(sites, "row 7")
    assert fit.slope == pytest.approx(GRADIENT, rel=1e-9)
    assert fit.intercept == pytest.approx(-GRADIENT * 28 * UM, rel=1e-9)
    expected_sigma = 98e-9 / np.sqrt(np.sum((xs - xs.mean()) ** 2))
    assert fit.sigma_slope == pytest.approx(expected_sigma, rel=1e-6)
    assert fit.chi2_red == pytest.approx(0.0, abs=1e-12)

    with pytest.raises(EstimationError):
        fit_line(sites[:2], "short")


def test_plane_and_row_summary():
    sites = []
    for row in range(4):
        for col in range(6):
            x, y = col * 7 * UM, row * 7 * UM
            sites.append(site(len(sites), x, y, 1e-7 + GRADIENT * x - 0.01 * y, row=row, col=col))
    field_map = FieldMap(mode="array", sites=sites, slope=REFERENCE_DETUNING_SLOPE)

    plane = fit_plane(field_map)
    assert plane.slope == pytest.approx(GRADIENT, rel=1e-6)
    assert plane.slope_y == pytest.approx(-0.01, rel=1e-6)
    assert plane.intercept == pytest.approx(1e-7, rel=1e-6)

    assert fit_row_gradient(field_map, 2).slope == pytest.approx(GRADIENT, rel=1e-9)
    rows = mean_row_gradient(field_map)
    assert len(rows.fits) == 4
    assert rows.mean == pytest.approx(GRADIENT, rel=1e-9)
    assert rows.spread == pytest.approx(0.0, abs=1e-12)

    mean, spread = resolution(field_map)
    assert mean == pytest.approx(98e-9, rel=1e-12)
    assert spread == pytest.approx(0.0, abs=1e-20)

    with pytest.raises(EstimationError):
        fit_plane(FieldMap(mode="array", sites=sites[:3], slope=REFERENCE_DETUNING_SLOPE))


def test_field_map_ignores_row_order(small_config):
    dataset = ExperimentEngine(small_config).run_experiment()
    shuffled = dataset.take(np.random.default_rng(4).permutation(len(dataset)))
    first = build_field_map(dataset, jobs=1).arrays(converged_only=False)
    second = build_field_map(shuffled, jobs=1).arrays(converged_only=False)
    np.testing.assert_array_equal(first["delta_b"], second["delta_b"])
    np.testing.assert_array_equal(first["sigma_delta_b"], second["sigma_delta_b"])


def test_field_map_needs_both_states(small_config):
    dataset = ExperimentEngine(small_config).run_experiment()
    with pytest.raises(DataError):
        build_field_map(dataset.take(np.flatnonzero(dataset.test_on)), jobs=1)
    with pytest.raises(DataError):
        build_field_map(dataset.take(np.zeros(0, dtype=np.int64)), jobs=1)


# ==================== END TO END ====================

@pytest.fixture(scope="module")
def reference_run():
    cfg = SensorSystemConfig(diagnostic_truth=True)
    engine = ExperimentEngine(cfg)
    dataset = engine.run_experiment()
    return cfg, engine, dataset, build_field_map(dataset)


def test_reference_run_converges(reference_run):
    _, _, dataset, field_map = reference_run
    assert len(field_map) == 270
    assert len(field_map.converged_sites()) >= 265
    assert dataset.metadata["n_cycles"] == 9570


def test_reference_run_reproduces_true_field(reference_run):
    _, _, dataset, field_map = reference_run
    within = [
        abs(s.delta_b - dataset.truth["delta_b"][s.key]) <= 3 * s.sigma_delta_b
        for s in field_map.converged_sites()
    ]
    assert np.mean(within) >= 0.95


def test_reference_run_row_gradients(reference_run):
    _, _, _, field_map = reference_run
    rows = mean_row_gradient(field_map)
    assert len(rows.fits) == 15
    agreeing = [abs(f.slope - GRADIENT) <= 3 * f.sigma_slope for f in rows.fits]
    assert sum(agreeing) >= 14
    assert rows.mean == pytest.approx(GRADIENT, rel=0.02)

    plane = fit_plane(field_map)
    assert abs(plane.slope - GRADIENT) <= 4 * plane.sigma_slope


def test_reference_run_resolution_and_sensitivity(reference_run):
    _, _, _, field_map = reference_run
    mean, _ = resolution(field_map)
    assert 50e-9 < mean < 200e-9

    report = sensitivity(field_map)
    assert 10e-9 < report.sensitivity < 40e-9
    assert report.coherent_time == pytest.approx(40.3e-3, rel=0.1)

    sigma_events = np.sqrt(55 * 87 * 0.15 * 0.85 / 2)
    events = np.array([s.prepared_events for s in field_map.sites])
    assert np.all(np.abs(events - 55 * 87 * 0.15) < 5 * sigma_events)


def test_reference_run_reference_frequency(reference_run):
    _, _, _, field_map = reference_run
    omegas = np.array([s.fit_off.omega for s in field_map.converged_sites()])
    standard_error = omegas.std(ddof=1) / np.sqrt(len(omegas))
    assert abs(omegas.mean() - TWO_PI * 38.7e3) < 3 * standard_error


def test_scanning_probe_agrees_with_array(reference_run):
    cfg, engine, _, field_map = reference_run
    probe_map = build_field_map(engine.scanning_probe_run([(63 * UM, 49 * UM)]))
    probe = probe_map.sites[0]
    array_site = field_map.sites[engine.geom.flat_index(7, 9)]
    assert probe.converged and array_site.converged
    assert (probe.row, probe.col) == (7, 9)
    combined = np.hypot(probe.sigma_delta_b, array_site.sigma_delta_b)
    assert abs(probe.delta_b - array_site.delta_b) <= 3 * combined


def test_scanning_probe_line_gradient(reference_run):
    cfg, engine, _, _ = reference_run
    scan = fit_scan_gradient(build_field_map(engine.scanning_probe_run(cfg.scan_positions)))
    assert scan.n_sites == 11
    assert abs(scan.slope - GRADIENT) <= 3 * scan.sigma_slope


def test_null_experiment_finds_no_field():
    inside, converged, total = 0, 0, 0
    plane = None
    for seed in range(20):
        cfg = SensorSystemConfig(
            grid_rows=4, grid_cols=10, pattern_rect=[0, 0, 2, 2], test_enabled=False, master_seed=1000 + seed
        )
        field_map = build_field_map(ExperimentEngine(cfg).run_experiment())
        sites = field_map.converged_sites()
        total += len(field_map)
        converged += len(sites)
        inside += sum(abs(s.delta_b) < 3 * s.sigma_delta_b for s in sites)
        if plane is None:
            plane = fit_plane(field_map)

    assert converged >= 0.95 * total
    assert inside >= 0.99 * converged
    assert abs(plane.slope) <= 4 * plane.sigma_slope
