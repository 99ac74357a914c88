"""Two-level physics of the 85Rb clock pair: Breit-Rabi splitting,
effective two-photon detuning and the Ramsey transfer probability.

Angular frequencies are in rad/s, fields in tesla, times in seconds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.constants import physical_constants

ArrayLike = Union[float, np.ndarray]

TWO_PI = 2.0 * np.pi

# Linearised field dependence of the effective detuning at the operating point
REFERENCE_DETUNING_SLOPE = TWO_PI * 9.2777e3 / 1e-6  # rad/s per tesla
STRETCH_SUSCEPTIBILITY_FACTOR = 2.5


# ==================== ESTRUCTURAS DE DATOS ====================

@dataclass(frozen=True)
class AtomicConstants:
    """Ground-state hyperfine and Zeeman constants"""

    hyperfine_splitting: float  # rad/s
    electron_g: float
    nuclear_g: float
    nuclear_spin: float
    bohr_magneton_over_hbar: float  # rad/s per tesla

    def __post_init__(self):
        if self.hyperfine_splitting <= 0:
            raise ValueError("hyperfine_splitting must be positive")
        if abs(self.nuclear_g) >= abs(self.electron_g):
            raise ValueError("nuclear_g must be much smaller than electron_g")

    @classmethod
    def rb85(cls) -> "AtomicConstants":
        bohr_hz_per_tesla = physical_constants["Bohr magneton in Hz/T"][0]
        return cls(
            hyperfine_splitting=TWO_PI * 3.035732439e9,
            electron_g=2.00233113,
            nuclear_g=-0.00029364,
            nuclear_spin=2.5,
            bohr_magneton_over_hbar=TWO_PI * bohr_hz_per_tesla,
        )

    @property
    def x_per_tesla(self) -> float:
        """Breit-Rabi field parameter x per tesla"""
        return (self.electron_g - self.nuclear_g) * self.bohr_magneton_over_hbar / self.hyperfine_splitting


@dataclass(frozen=True)
class HyperfineLevel:
    F: float
    m: float


@dataclass(frozen=True)
class SensorStates:
    """Clock pair: `up` lives in the upper hyperfine manifold, `down` in the lower"""

    up: HyperfineLevel = field(default_factory=lambda: HyperfineLevel(3, -1))
    down: HyperfineLevel = field(default_factory=lambda: HyperfineLevel(2, -1))

    @classmethod
    def default(cls) -> "SensorStates":
        return cls()

    @classmethod
    def stretch(cls) -> "SensorStates":
        """Pair with maximal |m_F| in the upper manifold"""
        return cls(up=HyperfineLevel(3, -3), down=HyperfineLevel(2, -2))

    @property
    def same_m(self) -> bool:
        return self.up.m == self.down.m


@dataclass(frozen=True)
class RamseyParams:
    rabi_frequency: float  # rad/s
    pulse_duration: float  # s
    two_photon_difference: float  # rad/s
    contrast: float = 1.0
    coherence_time: float = np.inf

    def __post_init__(self):
        if not 0.0 <= self.contrast <= 1.0:
            raise ValueError("contrast must lie in [0, 1]")
        if self.pulse_duration < 0 or self.coherence_time <= 0:
            raise ValueError("pulse_duration must be >= 0 and coherence_time > 0")


# ==================== BREIT-RABI ====================

def _root_term(x: ArrayLike, level: HyperfineLevel, k: AtomicConstants, upper: bool):
    """Square-root term of the Breit-Rabi level energy and its x-derivative"""
    n = 2.0 * k.nuclear_spin + 1.0
    if upper and abs(level.m) == k.nuclear_spin + 0.5:
        # stretched state: the root is linear in x, keep its sign
        s = np.sign(level.m)
        return 1.0 + s * x, s * np.ones_like(np.asarray(x, dtype=float))
    root = np.sqrt(1.0 + 4.0 * level.m * x / n + x**2)
    return root, (2.0 * level.m / n + x) / root


def breit_rabi_splitting(B: ArrayLike, states: SensorStates, k: AtomicConstants) -> ArrayLike:
    """Angular frequency between `up` and `down` at field magnitude B"""
    B = np.asarray(B, dtype=float)
    x = k.x_per_tesla * B
    if states.same_m:
        root, _ = _root_term(x, states.up, k, upper=False)
        return k.hyperfine_splitting * root

    r_up, _ = _root_term(x, states.up, k, upper=True)
    r_down, _ = _root_term(x, states.down, k, upper=False)
    linear = k.nuclear_g * k.bohr_magneton_over_hbar * B * (states.up.m - states.down.m)
    return linear + 0.5 * k.hyperfine_splitting * (r_up + r_down)


def zeeman_slope(B: ArrayLike, states: SensorStates, k: AtomicConstants) -> ArrayLike:
    """Closed-form d(splitting)/dB in rad/s per tesla"""
    B = np.asarray(B, dtype=float)
    x = k.x_per_tesla * B
    if states.same_m:
        _, d_root = _root_term(x, states.up, k, upper=False)
        return k.hyperfine_splitting * k.x_per_tesla * d_root

    _, d_up = _root_term(x, states.up, k, upper=True)
    _, d_down = _root_term(x, states.down, k, upper=False)
    linear = k.nuclear_g * k.bohr_magneton_over_hbar * (states.up.m - states.down.m)
    return linear + 0.5 * k.hyperfine_splitting * k.x_per_tesla * (d_up + d_down)


def susceptibility_ratio(B: float, k: AtomicConstants) -> float:
    """Field sensitivity of the stretch pair relative to the default pair"""
    stretch = zeeman_slope(B, SensorStates.stretch(), k)
    default = zeeman_slope(B, SensorStates.default(), k)
    return float(abs(stretch / default))


def effective_detuning(
    two_photon_difference: ArrayLike,
    B_local: ArrayLike,
    light_shift: ArrayLike,
    states: SensorStates,
    k: AtomicConstants,
) -> ArrayLike:
    """delta_eff = Delta12 - (splitting(B) + light shift)"""
    return two_photon_difference - (breit_rabi_splitting(B_local, states, k) + light_shift)


# ==================== RAMSEY ====================

def ramsey_down_probability(delta_eff: ArrayLike, T: ArrayLike, p: RamseyParams) -> ArrayLike:
    """Probability that an atom starting in |up> ends in |down>.

    Pulse, free precession, pulse, composed as SU(2) rotations; the
    interference part is then damped toward 1/2 by the contrast envelope.
    """
    delta = np.asarray(delta_eff, dtype=float)
    T = np.asarray(T, dtype=float)

    omega = p.rabi_frequency
    omega_g = np.sqrt(omega**2 + delta**2)
    half_angle = 0.5 * omega_g * p.pulse_duration
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(omega_g > 0, delta / omega_g, 0.0)
        coupling = np.where(omega_g > 0, omega / omega_g, 1.0)

    # U_pulse = [[a, b], [b, conj(a)]], a = cos - i*ratio*sin, b = -i*coupling*sin
    b_sq = (coupling * np.sin(half_angle)) ** 2
    phase = 0.5 * delta * T
    re_a_rot = np.cos(half_angle) * np.cos(phase) - ratio * np.sin(half_angle) * np.sin(phase)
    coherent = 4.0 * b_sq * re_a_rot**2

    envelope = p.contrast
    if np.isfinite(p.coherence_time):
        envelope = envelope * np.exp(-T / p.coherence_time)
    prob = 0.5 + (coherent - 0.5) * envelope
    return np.clip(prob, 0.0, 1.0)


def fringe_model(T: ArrayLike, A: float, C: float, omega: float, phi: float) -> ArrayLike:
    return A + C * np.cos(omega * np.asarray(T, dtype=float) + phi)
