"""Multi-wave-mixing picture in the displaced (polaron) frame.

Displacing the resonator by the qubit-conditioned pointer fields turns
``sigma_-`` into ``sigma_- D(delta_alpha)``.  Expanding the displacement
in photon number gives a ladder of sidebands at ``omega_q~ + n Delta_d``
with Poisson amplitudes ``exp(-|delta_alpha|^2) |delta_alpha|^(2n) / n!``.
"""

from dataclasses import dataclass
import math

import numpy as np

from .spectrum import QubitSpectrum


def dressed_qubit_frequency(device, drive):
    """Qubit frequency in the displaced frame (rad/us), symmetric loss (``delta_p = 0``)."""
    kappa = device.kappa
    delta = drive.detuning
    d2 = drive.amplitude**2
    shift_e = d2 * (delta - device.chi) / ((delta - device.chi) ** 2 + kappa**2 / 4)
    shift_g = d2 * delta / (delta**2 + kappa**2 / 4)
    return device.qubit_frequency + shift_e - shift_g


@dataclass(frozen=True)
class MixingLadder:
    dressed_frequency: float
    spacing: float
    n: np.ndarray
    frequencies: np.ndarray
    weights: np.ndarray
    tail: float


def mixing_ladder(sol, eps=1e-10):
    """Sideband ladder until the neglected Poisson weight is below ``eps``."""
    if not 0 < eps <= 1e-6:
        raise ValueError(f"eps must lie in (0, 1e-6], got {eps}")
    mean = abs(sol.delta_alpha) ** 2
    dressed = dressed_qubit_frequency(sol.device, sol.drive)
    order = 0
    while True:
        k = order + 1
        term = math.exp(k * math.log(mean) - mean - math.lgamma(k + 1)) if mean > 0 else 0.0
        ratio = mean / (k + 1)
        bound = term / (1 - ratio) if ratio < 1 else math.inf
        if bound < eps:
            break
        order += 1
    n = np.arange(order + 1)
    if mean == 0:
        weights = (n == 0).astype(float)
    else:
        weights = np.exp(n * math.log(mean) - mean - np.array([math.lgamma(i + 1) for i in n]))
    spacing = sol.drive.detuning
    return MixingLadder(
        dressed_frequency=dressed,
        spacing=spacing,
        n=n,
        frequencies=dressed + n * spacing,
        weights=weights,
        tail=bound,
    )


@dataclass(frozen=True)
class CrosscheckReport:
    passed: bool
    spacing_ladder: float
    spacing_poles: float
    spacing_error: float
    peak_deltas: np.ndarray
    weight_ratio: np.ndarray
    both_decay: bool
    center_offset: float


def _eventually_decreasing(w, start):
    tail = np.asarray(w)[start:]
    return bool(tail.size < 2 or np.all(np.diff(tail) <= 1e-15 * max(tail[0], 1e-300)))


def crosscheck_pole_positions(ladder, spec, tol=1e-12):
    """Compare the sideband ladder with the pole decomposition.

    Spacing must agree to ``tol`` relative.  Weights are compared only
    qualitatively: both sequences must decay beyond the Poisson mean.
    ``center_offset`` is the difference between the dressed frequency and
    the leading pole center, reported but not judged.
    """
    if not isinstance(spec, QubitSpectrum):
        raise TypeError("spec must be a QubitSpectrum")
    m = min(len(ladder.n), len(spec.centers))
    ladder_rel = ladder.frequencies[:m] - ladder.frequencies[0]
    pole_rel = spec.centers[:m] - spec.centers[0]
    deltas = ladder_rel - pole_rel
    pole_spacing = float(spec.centers[1] - spec.centers[0]) if len(spec.centers) > 1 else ladder.spacing
    scale = max(abs(ladder.spacing), abs(pole_spacing), 1e-300)
    spacing_error = abs(ladder.spacing - pole_spacing) / scale
    if m > 1:
        spacing_error = max(spacing_error, float(np.max(np.abs(deltas))) / (scale * (m - 1)))
    abs_w = np.abs(spec.weights[:m])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(ladder.weights[:m] > 0, abs_w / ladder.weights[:m], np.nan)
    start = int(math.ceil(ladder.n[np.argmax(ladder.weights)])) + 1
    both = _eventually_decreasing(abs_w, start) and _eventually_decreasing(ladder.weights, start)
    return CrosscheckReport(
        passed=bool(spacing_error <= tol and both),
        spacing_ladder=float(ladder.spacing),
        spacing_poles=pole_spacing,
        spacing_error=float(spacing_error),
        peak_deltas=deltas,
        weight_ratio=ratio,
        both_decay=both,
        center_offset=float(ladder.dressed_frequency - spec.centers[0]),
    )
