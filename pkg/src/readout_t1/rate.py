"""Readout-modified qubit decay rate as a spectral overlap.

    Gamma_eg = int S_q(omega) S_B(omega) domega/2pi

For a bath of Lorentzians the overlap of pole ``j`` with TLS ``k`` is

    2 g_k^2 Re[w_j / (gamma_j + gamma_2k - i (omega_tls_k - omega_j))],

obtained by closing the contour around the bath poles; a constant floor
contributes itself because ``S_q`` has unit weight.
"""

from dataclasses import dataclass, field
import math
import warnings
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .bath import BathSpectrum, evaluate_bath
from .errors import LevelingError
from .pointer import (
    DriveSpec,
    amplitude_for_gamma_m,
    amplitude_for_separation,
    solve_pointer_states,
)
from .spectrum import (
    DEFAULT_TRUNCATION,
    _pole_terms,
    evaluate,
    pole_decomposition,
    stark_shift,
)

CLOSED_FORM = "closed-form"
QUADRATURE = "quadrature"


@dataclass(frozen=True)
class DecayPrediction:
    gamma: float
    method: str
    error: float
    pole_contributions: tuple = ()

    def __post_init__(self):
        if not math.isfinite(self.gamma):
            raise ValueError(f"non-finite decay rate {self.gamma}")

    @property
    def T1(self):
        return math.inf if self.gamma == 0 else 1.0 / self.gamma


def _overlap_kernel(weights, centers, half_widths, tls):
    """Per-pole overlap of complex-weighted Lorentzians with one TLS line."""
    denom = half_widths + tls.gamma_2 - 1j * (tls.frequency - centers)
    return 2 * tls.coupling**2 * (weights / denom).real


def decay_rate_closed_form(spec, bath):
    """Exact overlap of a pole decomposition with a Lorentzian bath."""
    if not isinstance(bath, BathSpectrum):
        raise TypeError("closed form needs a BathSpectrum; use decay_rate_quadrature")
    per_pole = np.zeros(len(spec.weights))
    for tls in bath.components:
        per_pole += _overlap_kernel(spec.weights, spec.centers, spec.half_widths, tls)
    gamma = float(per_pole.sum()) + bath.background
    # neglected poles carry at most truncation_residual of weight
    peak = bath.background + sum(2 * c.coupling**2 / c.gamma_2 for c in bath.components)
    error = spec.truncation_residual * peak + 1e-15 * abs(gamma)
    return DecayPrediction(gamma, CLOSED_FORM, error, tuple(per_pole.tolist()))


def _bath_centers_and_widths(bath_fn):
    if isinstance(bath_fn, BathSpectrum):
        return [(c.frequency, c.gamma_2) for c in bath_fn.components]
    return []


def _merge_close(points, min_gap):
    """Drop breakpoints closer than ``min_gap`` to their predecessor; keep both ends."""
    out = [points[0]]
    for x in points[1:-1]:
        if x - out[-1] > min_gap:
            out.append(x)
    if points[-1] - out[-1] <= min_gap and len(out) > 1:
        out.pop()
    out.append(points[-1])
    return np.array(out)


def decay_rate_quadrature(
    sol,
    omega_q,
    bath_fn,
    tol=1e-8,
    eps=DEFAULT_TRUNCATION,
    n_widths=50.0,
    features: Optional[list] = None,
):
    """Overlap integral by adaptive quadrature.

    Parameters
    ----------
    bath_fn : BathSpectrum or callable
        ``S_B(omega)`` with ``omega`` absolute in rad/us.  A
        :class:`BathSpectrum` floor is added analytically.
    tol : float
        Requested relative accuracy, within ``[1e-12, 1e-4]``.
    features : list of (center, half_width), optional
        Extra bath features to resolve when ``bath_fn`` is a plain callable.

    The window covers every pole and bath center +/- ``n_widths`` of the
    corresponding half-width; the semi-infinite remainders are integrated
    separately on mapped intervals.
    """
    if not 1e-12 <= tol <= 1e-4:
        raise ValueError(f"tol must lie in [1e-12, 1e-4], got {tol}")
    spec = pole_decomposition(sol, omega_q, eps)
    floor = 0.0
    if isinstance(bath_fn, BathSpectrum):
        floor = bath_fn.background
        lines = bath_fn.with_background(0.0)
        fn: Callable = lambda w: evaluate_bath(lines, w)
    else:
        fn = bath_fn
    if spec.degenerate:
        if spec.order > 0 or abs(spec.weights[0] - 1) > eps:
            raise ValueError("zero-width pole with nontrivial weights; no quadrature window")
        gamma = float(fn(spec.center)) + floor
        return DecayPrediction(gamma, QUADRATURE, 0.0)

    feats = list(zip(spec.centers, spec.half_widths))
    feats += _bath_centers_and_widths(bath_fn)
    feats += list(features or [])
    lo = min(c - n_widths * w for c, w in feats)
    hi = max(c + n_widths * w for c, w in feats)
    points = set()
    for c, w in feats:
        for k in (-3, -1, 0, 1, 3):
            x = c + k * w
            if lo < x < hi:
                points.add(float(x))
    edges = _merge_close(sorted(points | {lo, hi}), 1e-6 * min(w for _, w in feats))

    def integrand(w):
        # raw pole sum: clamping the roundoff-level negatives would put
        # kinks into the far tails
        return _pole_terms(spec, w)[0].sum(axis=-1) * fn(w)

    total, err = 0.0, 0.0
    # rough scale for absolute tolerances
    scale = max(
        abs(float(np.sum([evaluate(spec, c) * fn(c) * w for c, w in feats]))), 1e-300
    )
    for a, b in zip(edges[:-1], edges[1:]):
        val, e = integrate.quad(integrand, a, b, limit=200, epsrel=tol / 10, epsabs=scale * tol / 100)
        total += val
        err += e
    for a, b in ((-np.inf, lo), (hi, np.inf)):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", integrate.IntegrationWarning)
            val, e = integrate.quad(integrand, a, b, limit=200, epsrel=tol / 10, epsabs=scale * tol / 100)
        total += val
        # a slowly converging far tail is tiny; count all of it as error
        err += abs(val) + e if caught else e
    gamma = total / (2 * math.pi) + floor
    return DecayPrediction(gamma, QUADRATURE, err / (2 * math.pi))


def decay_rate(sol, omega_q, bath, method=CLOSED_FORM, tol=1e-8, eps=DEFAULT_TRUNCATION):
    if method == CLOSED_FORM:
        return decay_rate_closed_form(pole_decomposition(sol, omega_q, eps), bath)
    if method == QUADRATURE:
        return decay_rate_quadrature(sol, omega_q, bath, tol=tol, eps=eps)
    raise ValueError(f"unknown method {method!r}")


def lorentzian_model_rate(device, drive, bath):
    """Baseline: one Lorentzian at ``omega_q + stark_shift`` of half-width ``gamma_m``."""
    sol = solve_pointer_states(device, drive)
    center = device.qubit_frequency + stark_shift(sol)
    gamma = bath.background
    for tls in bath.components:
        gamma += float(
            _overlap_kernel(np.ones(1), np.array([center]), np.array([sol.gamma_m]), tls)[0]
        )
    return DecayPrediction(gamma, "lorentzian-model", 1e-15 * abs(gamma))


@dataclass(frozen=True)
class SweepPoint:
    """One grid point of a sweep.  ``prediction`` is None when it failed."""

    index: int
    drive_frequency: float
    level_value: float
    amplitude: Optional[float]
    gamma_m: Optional[float]
    prediction: Optional[DecayPrediction]
    error: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.prediction is not None


FIXED_GAMMA_M = "fixed_gamma_m"
FIXED_AMPLITUDE = "fixed_amplitude"
FIXED_SEPARATION = "fixed_separation"


def rate_point(device, bath, drive_frequency, leveling, level_value, method=CLOSED_FORM,
               tol=1e-8, eps=DEFAULT_TRUNCATION, index=0):
    """Level the drive at one frequency and compute the decay rate.

    ``leveling`` selects how ``level_value`` is read: a target ``gamma_m``
    (1/us), a drive amplitude (rad/us) or a pointer separation ``|delta_alpha|``.
    Failures are captured in the returned point rather than raised.
    """
    amplitude = gamma_m = None
    try:
        drive = DriveSpec.for_device(device, drive_frequency, 1.0)
        if leveling == FIXED_GAMMA_M:
            amplitude = amplitude_for_gamma_m(device, drive, level_value)
        elif leveling == FIXED_AMPLITUDE:
            amplitude = float(level_value)
        elif leveling == FIXED_SEPARATION:
            amplitude = amplitude_for_separation(device, drive, level_value)
        else:
            raise ValueError(f"unknown leveling {leveling!r}")
        sol = solve_pointer_states(device, drive.with_amplitude(amplitude))
        gamma_m = sol.gamma_m
        pred = decay_rate(sol, device.qubit_frequency, bath, method, tol, eps)
    except (LevelingError, ValueError, ArithmeticError) as exc:
        return SweepPoint(index, drive_frequency, level_value, amplitude, gamma_m, None,
                          f"{type(exc).__name__}: {exc}")
    return SweepPoint(index, drive_frequency, level_value, amplitude, gamma_m, pred)


def sweep_drive_frequency(device, bath, drive_frequencies, leveling=FIXED_GAMMA_M,
                          level_value=None, method=CLOSED_FORM, tol=1e-8, eps=DEFAULT_TRUNCATION):
    """Decay rate over a grid of drive frequencies at fixed ``gamma_m`` or amplitude."""
    if level_value is None:
        raise ValueError("level_value (target gamma_m or amplitude) is required")
    return [
        rate_point(device, bath, float(wd), leveling, level_value, method, tol, eps, index=i)
        for i, wd in enumerate(np.atleast_1d(drive_frequencies))
    ]


def sweep_drive_power(device, bath, drive_frequency, separations, method=CLOSED_FORM,
                      tol=1e-8, eps=DEFAULT_TRUNCATION):
    """Decay rate versus pointer separation ``|delta_alpha|`` at fixed drive frequency."""
    return [
        rate_point(device, bath, drive_frequency, FIXED_SEPARATION, float(s), method, tol, eps, index=i)
        for i, s in enumerate(np.atleast_1d(separations))
    ]
