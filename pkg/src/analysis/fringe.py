"""Ramsey fringe fitting: spectral initialisation, variable-projection
refinement and a weighted nonlinear least-squares fit of
A + C cos(omega T + phi).
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit, minimize_scalar
from scipy.signal import lombscargle

from src.utils.logger import logger

US = 1e-6
_OVERSAMPLE = 20
FRACTION_TOLERANCE = 0.05


class FitStatus(Enum):
    CONVERGED = "converged"
    INSUFFICIENT_DATA = "insufficient_data"
    NO_PEAK = "no_peak"
    FAILED = "failed"


@dataclass(frozen=True)
class FringeFit:
    omega: float  # rad/s
    sigma_omega: float  # rad/s
    offset: float
    amplitude: float
    phase: float
    events: int
    chi2_red: float
    status: FitStatus
    ambiguous: bool = False  # omega within the guard band below the T-grid Nyquist edge
    peak_power: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status is FitStatus.CONVERGED

    @classmethod
    def failed(cls, status: FitStatus, events: int = 0, peak_power: float = 0.0) -> "FringeFit":
        nan = float("nan")
        return cls(nan, nan, nan, nan, nan, events, nan, status, peak_power=peak_power)


def _model_us(t_us, A, C, w, phi):
    return A + C * np.cos(w * t_us + phi)


def lowest_frequency(t_values: np.ndarray) -> float:
    """One full period across the T span, rad/s"""
    return float(2.0 * np.pi / np.ptp(t_values))


def nyquist_edge(t_values: np.ndarray) -> float:
    """pi / (grid step) for the distinct T values, rad/s"""
    steps = np.diff(np.unique(t_values))
    return float(np.pi / np.median(steps)) if len(steps) else float("inf")


def _linear_projection(t: np.ndarray, y: np.ndarray, w: np.ndarray, omega: float) -> Tuple[np.ndarray, float]:
    """Weighted LS of y on [1, cos, sin] at fixed omega -> (coefficients, weighted RSS)"""
    design = np.stack([np.ones_like(t), np.cos(omega * t), np.sin(omega * t)], axis=1)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    rss = float(np.sum(w * (y - design @ coef) ** 2))
    return coef, rss


def _initial_guess(
    t: np.ndarray, y: np.ndarray, w: np.ndarray, min_peak_power: float
) -> Optional[Tuple[np.ndarray, float]]:
    """Dominant periodogram peak refined by variable projection; None below the noise floor"""
    span = float(t.max() - t.min())
    omega_hi = nyquist_edge(t)
    omega_lo = lowest_frequency(t)
    n_grid = max(64, int(_OVERSAMPLE * len(t)))
    omegas = np.linspace(omega_lo, omega_hi, n_grid)

    centered = y - np.average(y, weights=w)
    if np.allclose(centered, 0.0):
        return None
    # periodogram in per-microsecond units keeps the trig arguments small
    power = lombscargle(t / US, centered, omegas * US, normalize=True)
    peak = int(np.argmax(power))
    peak_power = float(power[peak])
    if not np.isfinite(peak_power) or peak_power < min_peak_power:
        return None

    half_width = np.pi / span
    bounds = (max(omega_lo, omegas[peak] - half_width), min(omega_hi, omegas[peak] + half_width))
    best = minimize_scalar(
        lambda om: _linear_projection(t, y, w, om)[1],
        bounds=bounds,
        method="bounded",
        options={"xatol": 1e-9 * omegas[peak]},
    )
    omega = float(best.x)
    (A, a, b), _ = _linear_projection(t, y, w, omega)
    return np.array([A, np.hypot(a, b), omega, np.arctan2(-b, a)]), peak_power


def _wrap(phi: float) -> float:
    return float((phi + np.pi) % (2.0 * np.pi) - np.pi)


def _least_squares(
    t: np.ndarray, y: np.ndarray, sigma: np.ndarray, p0: np.ndarray
) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    t_us = t / US
    start = [p0[0], p0[1], p0[2] * US, p0[3]]
    # omega stays within half a span-limited linewidth of the seed
    half_width = np.pi / np.ptp(t_us)
    bounds = (
        [-np.inf, -np.inf, max(start[2] - half_width, 0.0), -np.inf],
        [np.inf, np.inf, start[2] + half_width, np.inf],
    )
    try:
        popt, pcov = curve_fit(
            _model_us, t_us, y, p0=start, sigma=sigma, absolute_sigma=True, bounds=bounds,
            xtol=1e-12, ftol=1e-12, gtol=1e-12, maxfev=20000,
        )
    except (RuntimeError, ValueError, OptimizeWarning) as e:
        logger.debug(f"Fringe least squares failed: {e}")
        return None
    if not np.all(np.isfinite(pcov)):
        return None
    return popt, pcov


def fit_fringe_curve(
    t_values,
    fractions,
    sigma=None,
    *,
    events: int = 0,
    min_peak_power: float = 0.25,
    nyquist_guard: float = 0.05,
    p0: Optional[np.ndarray] = None,
) -> FringeFit:
    """
    Fit A + C cos(omega T + phi) to a sampled curve.

    Without `sigma` every point gets unit error. `p0` (A, C, omega, phi in
    SI) skips the spectral initialisation.
    """
    t = np.asarray(t_values, dtype=float)
    y = np.asarray(fractions, dtype=float)
    sigma = np.ones_like(y) if sigma is None else np.asarray(sigma, dtype=float)
    if len(t) < 5 or len(np.unique(t)) < 5:
        return FringeFit.failed(FitStatus.INSUFFICIENT_DATA, events)

    peak_power = 0.0
    if p0 is None:
        guess = _initial_guess(t, y, 1.0 / sigma**2, min_peak_power)
        if guess is None:
            return FringeFit.failed(FitStatus.NO_PEAK, events)
        p0, peak_power = guess

    result = _least_squares(t, y, sigma, p0)
    if result is None:
        return FringeFit.failed(FitStatus.FAILED, events, peak_power)
    (A, C, w_us, phi), pcov = result

    omega = w_us / US
    if omega < 0:
        omega, phi = -omega, -phi
    if C < 0:
        C, phi = -C, phi + np.pi
    if not lowest_frequency(t) <= omega <= nyquist_edge(t):
        logger.debug(f"Fringe frequency {omega:.1f} rad/s left the resolvable band")
        return FringeFit.failed(FitStatus.FAILED, events, peak_power)

    residuals = (y - _model_us(t / US, A, C, omega * US, phi)) / sigma
    dof = max(1, len(y) - 4)
    chi2_red = float(np.sum(residuals**2) / dof)
    sigma_omega = float(np.sqrt(pcov[2, 2]) / US) * max(1.0, np.sqrt(chi2_red))
    if not sigma_omega > 0:
        return FringeFit.failed(FitStatus.FAILED, events, peak_power)

    ambiguous = omega >= (1.0 - nyquist_guard) * nyquist_edge(t)
    if ambiguous:
        logger.debug(f"Fringe frequency {omega:.1f} rad/s sits at the Nyquist edge")
    return FringeFit(
        omega=float(omega),
        sigma_omega=sigma_omega,
        offset=float(A),
        amplitude=float(C),
        phase=_wrap(phi),
        events=events,
        chi2_red=chi2_red,
        status=FitStatus.CONVERGED,
        ambiguous=bool(ambiguous),
        peak_power=peak_power,
    )


def binomial_sigma(p: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.sqrt(p * (1.0 - p) / n)


def is_physical(fit: FringeFit, tolerance: float = FRACTION_TOLERANCE) -> bool:
    """Fitted fringe stays inside [0, 1] as a detection fraction must"""
    return fit.offset - fit.amplitude >= -tolerance and fit.offset + fit.amplitude <= 1.0 + tolerance


def fit_fringe(
    t_values,
    occupied,
    detected,
    *,
    min_t_values: int = 8,
    min_peak_power: float = 0.25,
    nyquist_guard: float = 0.05,
) -> FringeFit:
    """
    Fit one site and field state from per-T counts.

    The detection fraction is detected / occupied. The first pass weights
    with continuity-corrected binomial errors of the observed fractions;
    the second recomputes them from the first-pass model.
    """
    t = np.asarray(t_values, dtype=float)
    n = np.asarray(occupied, dtype=float)
    d = np.asarray(detected, dtype=float)
    usable = n > 0
    events = int(n.sum())
    if np.count_nonzero(usable) < max(min_t_values, 5):
        return FringeFit.failed(FitStatus.INSUFFICIENT_DATA, events)
    if np.any(d[usable] > n[usable]) or np.any(d < 0):
        raise ValueError("detected counts must lie between 0 and the occupied counts")

    t, n, d = t[usable], n[usable], d[usable]
    y = d / n
    p_obs = (d + 0.5) / (n + 1.0)
    first = fit_fringe_curve(
        t, y, binomial_sigma(p_obs, n),
        events=events, min_peak_power=min_peak_power, nyquist_guard=nyquist_guard,
    )
    if not first.converged:
        return first
    if not is_physical(first):
        logger.debug(f"Fringe offset {first.offset:.3f} amplitude {first.amplitude:.3f} is not a fraction")
        return FringeFit.failed(FitStatus.FAILED, events, first.peak_power)

    floor = 0.5 / (n + 1.0)
    p_model = np.clip(
        _model_us(t / US, first.offset, first.amplitude, first.omega * US, first.phase), floor, 1.0 - floor
    )
    second = fit_fringe_curve(
        t, y, binomial_sigma(p_model, n),
        events=events, nyquist_guard=nyquist_guard,
        p0=np.array([first.offset, first.amplitude, first.omega, first.phase]),
    )
    if not second.converged or not is_physical(second):
        return first
    return FringeFit(**{**second.__dict__, "peak_power": first.peak_power})
