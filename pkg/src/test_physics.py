import numpy as np
import pytest
from scipy.integrate import solve_ivp

from src.sensor.libs.physics import (
    REFERENCE_DETUNING_SLOPE,
    TWO_PI,
    RamseyParams,
    SensorStates,
    breit_rabi_splitting,
    effective_detuning,
    fringe_model,
    ramsey_down_probability,
    susceptibility_ratio,
    zeeman_slope,
)

B_OPERATING = 283e-6


def test_splitting_at_zero_field_is_hyperfine(rb85):
    for states in (SensorStates.default(), SensorStates.stretch()):
        assert breit_rabi_splitting(0.0, states, rb85) == pytest.approx(rb85.hyperfine_splitting, rel=1e-15)


def test_slope_at_operating_point(rb85):
    slope = zeeman_slope(B_OPERATING, SensorStates.default(), rb85)
    # splitting shrinks with B for the m = -1 pair
    assert slope < 0
    assert abs(slope) == pytest.approx(REFERENCE_DETUNING_SLOPE, rel=1e-3)


def test_slope_matches_finite_difference(rb85):
    B = np.linspace(1e-6, 1e-3, 1001)
    h = 1e-9
    for states in (SensorStates.default(), SensorStates.stretch()):
        numeric = (breit_rabi_splitting(B + h, states, rb85) - breit_rabi_splitting(B - h, states, rb85)) / (2 * h)
        np.testing.assert_allclose(zeeman_slope(B, states, rb85), numeric, rtol=1e-6)


def test_low_field_slope_is_linear_zeeman(rb85):
    expected = -(rb85.electron_g - rb85.nuclear_g) * rb85.bohr_magneton_over_hbar / 3.0
    assert zeeman_slope(0.0, SensorStates.default(), rb85) == pytest.approx(expected, rel=1e-12)


def test_stretch_pair_is_about_two_and_a_half_times_more_sensitive(rb85):
    assert susceptibility_ratio(B_OPERATING, rb85) == pytest.approx(2.5, rel=0.02)


def test_detuning_vanishes_when_drive_matches_splitting(rb85):
    states = SensorStates.default()
    light_shift = TWO_PI * 1.3e3
    drive = breit_rabi_splitting(B_OPERATING, states, rb85) + light_shift
    assert effective_detuning(drive, B_OPERATING, light_shift, states, rb85) == pytest.approx(0.0, abs=1e-3)


def test_default_drive_sits_at_ramsey_offset(default_config, rb85):
    drive = default_config.two_photon_difference_rad()
    delta = effective_detuning(drive, B_OPERATING, 0.0, SensorStates.default(), rb85)
    assert delta == pytest.approx(TWO_PI * 38.7e3, rel=1e-9)


def test_detuning_rises_with_field(default_config, rb85):
    drive = default_config.two_photon_difference_rad()
    states = SensorStates.default()
    step = effective_detuning(drive, B_OPERATING + 1e-6, 0.0, states, rb85) - effective_detuning(
        drive, B_OPERATING, 0.0, states, rb85
    )
    assert step == pytest.approx(TWO_PI * 9.2777e3, rel=1e-3)


def test_resonant_ideal_pulses_transfer_fully(ideal_ramsey):
    T = np.linspace(2e-6, 110e-6, 55)
    np.testing.assert_allclose(ramsey_down_probability(0.0, T, ideal_ramsey), 1.0, atol=1e-12)


def test_short_pulse_limit_is_textbook_fringe(rng):
    rabi = TWO_PI * 1e15
    params = RamseyParams(rabi_frequency=rabi, pulse_duration=0.5 * np.pi / rabi, two_photon_difference=0.0)
    delta = TWO_PI * rng.uniform(-100e3, 100e3, 500)
    T = rng.uniform(2e-6, 110e-6, 500)
    expected = 0.5 * (1.0 + np.cos(delta * T))
    np.testing.assert_allclose(ramsey_down_probability(delta, T, params), expected, atol=1e-9)


def _integrate_sequence(delta, rabi, tau, T):
    """Schrodinger equation in the rotating frame, pulse / free / pulse"""

    def rhs(_, psi, coupling):
        H = 0.5 * np.array([[delta, coupling], [coupling, -delta]])
        return -1j * (H @ psi)

    psi = np.array([1.0 + 0j, 0.0 + 0j])
    for duration, coupling in ((tau, rabi), (T, 0.0), (tau, rabi)):
        sol = solve_ivp(rhs, (0.0, duration), psi, args=(coupling,), method="DOP853", rtol=1e-11, atol=1e-12)
        psi = sol.y[:, -1]
    return abs(psi[1]) ** 2


def test_probability_matches_integrated_schrodinger_equation():
    rng = np.random.default_rng(7)
    for _ in range(200):
        rabi = TWO_PI * rng.uniform(0.3e6, 1.0e6)
        tau = rng.uniform(0.2e-6, 0.6e-6)
        delta = TWO_PI * rng.uniform(-150e3, 150e3)
        T = rng.uniform(2e-6, 110e-6)
        params = RamseyParams(rabi_frequency=rabi, pulse_duration=tau, two_photon_difference=0.0)
        assert ramsey_down_probability(delta, T, params) == pytest.approx(
            _integrate_sequence(delta, rabi, tau, T), abs=1e-6
        )


def test_probability_stays_in_unit_interval(rng):
    for _ in range(50):
        params = RamseyParams(
            rabi_frequency=TWO_PI * rng.uniform(0.1e6, 2e6),
            pulse_duration=rng.uniform(0.0, 2e-6),
            two_photon_difference=0.0,
            contrast=rng.uniform(0.0, 1.0),
            coherence_time=rng.uniform(10e-6, 1e-3),
        )
        p = ramsey_down_probability(TWO_PI * rng.uniform(-500e3, 500e3, 100), rng.uniform(0, 200e-6, 100), params)
        assert np.all((p >= 0.0) & (p <= 1.0))


def test_contrast_envelope_damps_toward_half(ideal_ramsey):
    params = RamseyParams(
        rabi_frequency=ideal_ramsey.rabi_frequency,
        pulse_duration=ideal_ramsey.pulse_duration,
        two_photon_difference=0.0,
        contrast=0.55,
        coherence_time=50e-6,
    )
    assert ramsey_down_probability(0.0, 50e-6, params) == pytest.approx(0.5 + 0.5 * 0.55 * np.exp(-1.0), rel=1e-12)


def test_fringe_model_shape():
    T = np.linspace(0, 100e-6, 11)
    omega = TWO_PI * 40e3
    np.testing.assert_allclose(fringe_model(T, 0.4, 0.0, omega, 0.3), 0.4)
    np.testing.assert_allclose(fringe_model(T + TWO_PI / omega, 0.4, 0.1, omega, 0.3), fringe_model(T, 0.4, 0.1, omega, 0.3))
    half = np.pi / omega
    np.testing.assert_allclose(
        fringe_model(T + half, 0.4, 0.1, omega, 0.3) - 0.4, -(fringe_model(T, 0.4, 0.1, omega, 0.3) - 0.4), atol=1e-12
    )
