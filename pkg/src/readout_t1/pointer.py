"""Qubit-conditioned resonator fields under a continuous readout drive.

The resonator is driven in the frame rotating at the drive frequency.  For
the qubit held in ``g`` or ``e`` the field relaxes to a coherent state
(``alpha_g`` / ``alpha_e``).  Starting from ``|e, alpha_e>`` the ``g``
branch of the off-diagonal qubit operator relaxes from ``alpha_e`` to
``alpha_g``; the exponent that accumulates along the way gives the
measurement-induced dephasing rate ``gamma_m``, the overall shift ``B`` and
the transient coefficient ``A`` used by :mod:`readout_t1.spectrum`.
"""

from dataclasses import dataclass, replace
import math
from typing import Optional

import numpy as np

from .errors import LevelingError


def _check_finite(**values):
    for name, value in values.items():
        if value is None:
            continue
        if not np.all(np.isfinite(value)):
            raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class DeviceParams:
    """Static device constants, all angular (rad/us) or dimensionless.

    ``chi`` is the full dispersive shift, so the resonator sits at
    ``resonator_frequency + chi`` with the qubit excited.  ``delta_p`` sets
    the Purcell-filter asymmetry of loss rates and drive amplitudes.
    ``purcell_frequency`` and ``purcell_coupling`` are carried as metadata
    only.
    """

    qubit_frequency: float
    resonator_frequency: float
    chi: float
    kappa: float
    delta_p: float = 0.0
    eta: float = 1.0
    purcell_frequency: Optional[float] = None
    purcell_coupling: Optional[float] = None

    def __post_init__(self):
        _check_finite(
            qubit_frequency=self.qubit_frequency,
            resonator_frequency=self.resonator_frequency,
            chi=self.chi,
            kappa=self.kappa,
            delta_p=self.delta_p,
            eta=self.eta,
            purcell_frequency=self.purcell_frequency,
            purcell_coupling=self.purcell_coupling,
        )
        if self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.kappa_g <= 0 or self.kappa_e <= 0:
            raise ValueError(
                f"delta_p={self.delta_p} makes a state-dependent loss rate vanish"
            )
        if not 0 < self.eta <= 1:
            raise ValueError(f"quantum efficiency must lie in (0, 1], got {self.eta}")

    @classmethod
    def from_linewidths(cls, qubit_frequency, resonator_frequency, chi, kappa_g, kappa_e, **kw):
        """Build from the measured ``g``/``e`` resonator linewidths.

        Inverts ``kappa_{g,e} = kappa (1 -/+ delta_p/2)^2``.
        """
        if kappa_g <= 0 or kappa_e <= 0:
            raise ValueError("kappa_g and kappa_e must be positive")
        sg, se = math.sqrt(kappa_g), math.sqrt(kappa_e)
        kappa = ((sg + se) / 2) ** 2
        delta_p = 2 * (se - sg) / (se + sg)
        return cls(qubit_frequency, resonator_frequency, chi, kappa, delta_p, **kw)

    @property
    def kappa_g(self):
        return self.kappa * (1 - self.delta_p / 2) ** 2

    @property
    def kappa_e(self):
        return self.kappa * (1 + self.delta_p / 2) ** 2

    @property
    def resonator_frequency_e(self):
        return self.resonator_frequency + self.chi

    def canonical_drive_frequency(self, point):
        """Drive frequency for ``point`` in ``{"g", "mid", "e"}``."""
        offsets = {"g": 0.0, "mid": 0.5, "e": 1.0}
        if point not in offsets:
            raise ValueError(f"unknown drive point {point!r}")
        return self.resonator_frequency + offsets[point] * self.chi


@dataclass(frozen=True)
class DriveSpec:
    """Readout drive: detuning from ``omega_r(g)`` and amplitude ``d_r``.

    ``x, y`` scale the resonator damping operator for ``e``/``g`` and
    ``u, v`` scale the drive.  :meth:`for_device` fills them from
    ``delta_p``, where ``x = u`` and ``y = v``.
    """

    detuning: float
    amplitude: float
    x: float = 1.0
    y: float = 1.0
    u: float = 1.0
    v: float = 1.0

    def __post_init__(self):
        _check_finite(
            detuning=self.detuning, amplitude=self.amplitude,
            x=self.x, y=self.y, u=self.u, v=self.v,
        )
        if self.amplitude < 0:
            raise ValueError(f"drive amplitude must be >= 0, got {self.amplitude}")

    @classmethod
    def for_device(cls, device, drive_frequency, amplitude):
        return cls.at_detuning(device, drive_frequency - device.resonator_frequency, amplitude)

    @classmethod
    def at_detuning(cls, device, detuning, amplitude):
        e = 1 + device.delta_p / 2
        g = 1 - device.delta_p / 2
        return cls(detuning, amplitude, x=e, y=g, u=e, v=g)

    @property
    def amplitude_e(self):
        return self.u * self.amplitude

    @property
    def amplitude_g(self):
        return self.v * self.amplitude

    def drive_frequency(self, device):
        return device.resonator_frequency + self.detuning

    def with_amplitude(self, amplitude):
        return replace(self, amplitude=amplitude)


@dataclass(frozen=True)
class PointerSolution:
    """Steady-state pointer fields and the coefficients derived from them.

    ``shift`` is the overall frequency shift ``B``.  ``A`` is the
    coefficient entering the pole weights ``(-A)^j e^A / j!``; the
    correlation function carries ``conj(A)`` in its transient factor.
    """

    device: DeviceParams
    drive: DriveSpec
    alpha_g: complex
    alpha_e: complex
    delta_alpha: complex
    gamma_m: float
    shift: float
    A: complex
    chi_tilde: complex
    kappa_g: float
    kappa_e: float
    decay_exponent: complex

    @property
    def exponent(self):
        """Steady-state exponent ``-gamma_m + i B``."""
        return complex(-self.gamma_m, self.shift)


def solve_pointer_states(device, drive):
    """Steady-state pointer fields and ``gamma_m``, ``B``, ``A``.

    ``gamma_m`` and ``B`` come from the exponent that the steady state
    contributes to ``d/dt log C_q``; ``A`` is the coefficient of the
    transient relaxation of the ``g`` branch from ``alpha_e`` to ``alpha_g``.
    """
    kappa = device.kappa
    chi = device.chi
    x, y, u, v = drive.x, drive.y, drive.u, drive.v
    delta = drive.detuning
    d = drive.amplitude
    kappa_e = kappa * x * x
    kappa_g = kappa * y * y
    if kappa_g <= 0 or kappa_e <= 0:
        raise ValueError("state-dependent loss rates must be positive")

    alpha_e = u * d / (delta - chi + 0.5j * kappa_e)
    alpha_g = v * d / (delta + 0.5j * kappa_g)
    delta_alpha = alpha_e - alpha_g
    chi_tilde = 0.5j * (x - y) ** 2 * kappa + chi
    lam = 1j * delta - kappa_g / 2

    ae_c = np.conj(alpha_e)
    z = 1j * chi_tilde * alpha_g * ae_c + 1j * d * (u - v) * (ae_c + alpha_g)
    # log C_q(t) picks up K (e^{lam t} - 1) from the relaxing g branch;
    # the pole weights need A = -conj(K).
    K = (1j * ae_c * delta_alpha * chi_tilde + 1j * d * (u - v) * delta_alpha) / lam
    A = -np.conj(K)

    gamma_m = -z.real
    scale = kappa * (abs(alpha_e) ** 2 + abs(alpha_g) ** 2)
    if gamma_m < 0:
        if gamma_m < -1e-12 * max(scale, 1e-300):
            raise ValueError(f"negative dephasing rate {gamma_m}; check x, y, u, v")
        gamma_m = 0.0

    _check_finite(alpha_e=alpha_e, alpha_g=alpha_g, A=A, gamma_m=gamma_m)
    return PointerSolution(
        device=device,
        drive=drive,
        alpha_g=complex(alpha_g),
        alpha_e=complex(alpha_e),
        delta_alpha=complex(delta_alpha),
        gamma_m=float(gamma_m),
        shift=float(z.imag),
        A=complex(A),
        chi_tilde=complex(chi_tilde),
        kappa_g=kappa_g,
        kappa_e=kappa_e,
        decay_exponent=complex(lam),
    )


def closed_form_gamma_m(sol):
    """``|sqrt(kappa_e) alpha_e - sqrt(kappa_g) alpha_g|^2 / 2``."""
    return 0.5 * abs(math.sqrt(sol.kappa_e) * sol.alpha_e - math.sqrt(sol.kappa_g) * sol.alpha_g) ** 2


def closed_form_shift(sol):
    """Quoted closed form of ``B``, kept as a cross-check of the exponent route."""
    d = sol.drive
    val = (
        math.sqrt(sol.kappa_e * sol.kappa_g) * np.conj(sol.alpha_e) * sol.alpha_g
        + 1j * (d.amplitude_e * np.conj(sol.alpha_e) - d.amplitude_g * sol.alpha_g)
    )
    return float(val.imag)


def transient_field(sol, t):
    """Fields ``(alpha_e(t), alpha_g(t))`` of the ``g``/``e`` branches.

    The ``e`` branch starts in its steady state; the ``g`` branch starts at
    ``alpha_e`` and relaxes to ``alpha_g``.
    """
    t = np.asarray(t, dtype=float)
    _check_finite(t=t)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    alpha_g_t = sol.delta_alpha * np.exp(sol.decay_exponent * t) + sol.alpha_g
    alpha_e_t = np.full_like(alpha_g_t, sol.alpha_e, dtype=complex)
    if alpha_g_t.ndim == 0:
        return complex(alpha_e_t), complex(alpha_g_t)
    return alpha_e_t, alpha_g_t


def _unit_solution(device, drive):
    return solve_pointer_states(device, drive.with_amplitude(1.0))


def level_drive_amplitude(device, drive_frequency, target_snr_rate):
    """Drive amplitude giving ``d/dt SNR = target_snr_rate``.

    Uses ``d/dt SNR = 4 eta gamma_m`` and ``gamma_m ~ d_r^2``.
    """
    if not np.isfinite(target_snr_rate) or target_snr_rate <= 0:
        raise LevelingError(f"target SNR rate must be positive, got {target_snr_rate}")
    drive = DriveSpec.for_device(device, drive_frequency, 1.0)
    return amplitude_for_gamma_m(device, drive, target_snr_rate / (4 * device.eta))


def amplitude_for_gamma_m(device, drive, target_gamma_m):
    """Amplitude that makes ``gamma_m`` equal ``target_gamma_m``."""
    if not np.isfinite(target_gamma_m) or target_gamma_m < 0:
        raise LevelingError(f"target dephasing rate must be >= 0, got {target_gamma_m}")
    unit = _unit_solution(device, drive).gamma_m
    if unit <= 0:
        raise LevelingError(
            "measurement rate vanishes at this drive frequency; amplitude cannot be leveled"
        )
    return math.sqrt(target_gamma_m / unit)


def amplitude_for_separation(device, drive, separation):
    """Amplitude giving pointer-state separation ``|delta_alpha| = separation``."""
    if not np.isfinite(separation) or separation < 0:
        raise LevelingError(f"separation must be >= 0, got {separation}")
    unit = abs(_unit_solution(device, drive).delta_alpha)
    if unit == 0:
        raise LevelingError("pointer states do not separate at this drive frequency")
    return separation / unit
