"""Drive-renormalized qubit correlation function and emission spectrum.

The correlation function of the driven qubit is

    C_q(t) = exp[(i omega_q + z) t] * exp{conj(A) [1 - exp(lam t)]},

with ``z = -gamma_m + i B`` and ``lam = i Delta_d - kappa_g/2`` taken from a
:class:`~readout_t1.pointer.PointerSolution`.  Expanding the second
exponential turns the emission spectrum (Fourier transform of ``C_q^*``)
into a sum of complex-weighted Lorentzian poles

    S_q(omega) = sum_j 2 Re[w_j / (gamma_j - i (omega - omega_j))],
    w_j = (-A)^j e^A / j!,  gamma_j = gamma_m + j kappa_g/2,
    omega_j = omega_q + j Delta_d + B.

Spectral densities are in us, so ``int S_q domega/2pi`` is dimensionless.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import integrate

from .pointer import PointerSolution

DEFAULT_TRUNCATION = 1e-10


@dataclass(frozen=True)
class QubitSpectrum:
    """Truncated pole decomposition of ``S_q``."""

    weights: np.ndarray
    centers: np.ndarray
    half_widths: np.ndarray
    order: int
    truncation_residual: float
    truncation: float
    solution: PointerSolution
    qubit_frequency: float

    @property
    def degenerate(self):
        """True for a zero-width line (undriven qubit): ``S_q`` is a delta."""
        return bool(self.half_widths[0] == 0.0)

    @property
    def center(self):
        return float(self.centers[0])


@dataclass(frozen=True)
class CorrelationTrace:
    times: np.ndarray
    values: np.ndarray


def _tail_bound(abs_a, re_a, order):
    """Bound on sum_{j > order} |A|^j e^{Re A} / j!."""
    if abs_a == 0:
        return 0.0
    j = order + 1
    log_term = j * math.log(abs_a) - math.lgamma(j + 1) + re_a
    ratio = abs_a / (j + 1)
    if ratio >= 1:
        return math.inf
    return math.exp(log_term) / (1 - ratio)


def truncation_order(A, eps=DEFAULT_TRUNCATION):
    """Smallest order whose neglected-weight bound is below ``eps``."""
    abs_a, re_a = abs(A), A.real
    order = 0
    while _tail_bound(abs_a, re_a, order) >= eps:
        order += 1
    return order


def pole_decomposition(sol, omega_q, eps=DEFAULT_TRUNCATION):
    if not 0 < eps <= 1e-6:
        raise ValueError(f"truncation eps must lie in (0, 1e-6], got {eps}")
    if sol.kappa_g <= 0:
        raise ValueError("kappa_g must be positive for the pole widths to grow")
    A = sol.A
    order = truncation_order(A, eps)
    j = np.arange(order + 1)
    weights = np.empty(order + 1, dtype=complex)
    weights[0] = np.exp(A)
    for k in range(1, order + 1):
        weights[k] = weights[k - 1] * (-A) / k
    return QubitSpectrum(
        weights=weights,
        centers=omega_q + j * sol.drive.detuning + sol.shift,
        half_widths=sol.gamma_m + j * sol.kappa_g / 2,
        order=order,
        truncation_residual=_tail_bound(abs(A), A.real, order),
        truncation=eps,
        solution=sol,
        qubit_frequency=omega_q,
    )


def _pole_terms(spec, omega):
    omega = np.asarray(omega, dtype=float)
    detune = omega[..., None] - spec.centers
    denom = spec.half_widths - 1j * detune
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = 2 * (spec.weights / denom).real
        bound = 2 * np.abs(spec.weights) / np.abs(denom)
    return terms, bound


def evaluate(spec, omega):
    """``S_q(omega)`` in us.

    Negative values within the truncation/rounding budget are clamped to
    zero; anything more negative is a bug and raises.
    """
    omega = np.asarray(omega, dtype=float)
    if spec.degenerate:
        out = np.where(omega == spec.center, np.inf, 0.0)
        return out if out.ndim else float(out)
    terms, bound = _pole_terms(spec, omega)
    s = terms.sum(axis=-1)
    tol = max(spec.truncation, 1e-13) * bound.sum(axis=-1)
    if np.any(s < -tol):
        worst = float(np.min(s + tol))
        raise ValueError(f"pole sum negative beyond truncation budget ({worst:.3e})")
    s = np.where(s < 0, 0.0, s)
    return s if s.ndim else float(s)


def lorentzian(omega, center, half_width):
    """Unit-area (over domega/2pi) Lorentzian ``2 g / ((w - c)^2 + g^2)``."""
    omega = np.asarray(omega, dtype=float)
    return 2 * half_width / ((omega - center) ** 2 + half_width**2)


def correlation(sol, omega_q, t):
    """``C_q(t)`` for ``t >= 0`` (scalar or array)."""
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("t must be finite")
    if np.any(t < 0):
        raise ValueError("correlation is defined here for t >= 0")
    steady = (1j * omega_q + sol.exponent) * t
    transient = np.conj(sol.A) * (1 - np.exp(sol.decay_exponent * t))
    out = np.exp(steady + transient)
    return out if out.ndim else complex(out)


def correlation_trace(sol, omega_q, times):
    times = np.asarray(times, dtype=float)
    return CorrelationTrace(times=times, values=np.asarray(correlation(sol, omega_q, times)))


def first_moment(sol):
    """``Im dC_q/dt|_0``: the emission-spectrum first moment (rad/us).

    Accepts a :class:`PointerSolution` or a :class:`QubitSpectrum`.
    """
    omega_q = None
    if isinstance(sol, QubitSpectrum):
        omega_q = sol.qubit_frequency
        sol = sol.solution
    if omega_q is None:
        omega_q = sol.device.qubit_frequency
    slope = 1j * omega_q + sol.exponent - np.conj(sol.A) * sol.decay_exponent
    return float(slope.imag)


def stark_shift(sol):
    """Emission-side Stark shift ``|alpha_e|^2 chi + 2 d (u - v) Re alpha_e``."""
    d = sol.drive
    return float(
        abs(sol.alpha_e) ** 2 * sol.device.chi
        + 2 * d.amplitude * (d.u - d.v) * sol.alpha_e.real
    )


def initial_dephasing_rate(sol):
    """``-d/dt log|C_q|`` at ``t = 0``."""
    return float(-(sol.exponent - np.conj(sol.A) * sol.decay_exponent).real)


def _window(spec, n_widths):
    gmax = float(spec.half_widths.max())
    return spec.centers.min() - n_widths * gmax, spec.centers.max() + n_widths * gmax


def analytic_weight(spec, lo, hi):
    """Exact ``int_lo^hi S_q domega/2pi`` of the truncated pole sum."""
    total = 0.0
    for w, c, g in zip(spec.weights, spec.centers, spec.half_widths):
        a, b = lo - c, hi - c
        total += w.real * (math.atan2(b, g) - math.atan2(a, g))
        total -= w.imag * 0.5 * math.log((g * g + b * b) / (g * g + a * a))
    return total / math.pi


def normalization(spec, n_widths=50.0, rtol=1e-10):
    """``int S_q domega/2pi`` by adaptive quadrature.

    The window spans all pole centers +/- ``n_widths`` of the widest pole;
    the remainder outside the window is added in closed form.
    """
    if spec.degenerate:
        return 1.0
    lo, hi = _window(spec, n_widths)
    inner = np.unique(spec.centers[(spec.centers > lo) & (spec.centers < hi)])
    edges = np.concatenate(([lo], inner, [hi]))
    peak = float(np.sum(2 * np.abs(spec.weights) / spec.half_widths))
    core = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(
            lambda w: evaluate(spec, w), a, b,
            limit=500, epsabs=1e-14 * peak * (hi - lo), epsrel=rtol,
        )
        core += val
    total = float(np.sum(spec.weights.real))
    tail = total - analytic_weight(spec, lo, hi)
    return core / (2 * math.pi) + tail


@dataclass(frozen=True)
class SampledSpectrum:
    omega: np.ndarray
    values: np.ndarray
    dt: float
    duration: float


def fft_grid(sol, omega_q, eps=DEFAULT_TRUNCATION):
    """Default ``(T, N)`` for :func:`spectrum_via_fft`."""
    spec = pole_decomposition(sol, omega_q, eps)
    duration, half_span = _fft_requirements(sol, spec)
    dt = math.pi / (2 * half_span)
    n = 1 << max(int(math.ceil(math.log2(duration / dt))), 8)
    return n * dt, n


def _fft_requirements(sol, spec):
    if sol.gamma_m <= 0:
        raise ValueError("correlation does not decay (gamma_m = 0); no FFT spectrum")
    duration = 20.0 / min(sol.gamma_m, sol.kappa_g / 2)
    spread = float(np.max(np.abs(spec.centers - spec.centers[0])))
    half_span = spread + 20.0 * float(spec.half_widths.max())
    return duration, half_span


def spectrum_via_fft(sol, omega_q, T=None, N=None, eps=DEFAULT_TRUNCATION):
    """``S_q`` from a discrete half-line transform of ``C_q^*``.

    Uses ``S_q(w) = 2 Re int_0^inf e^{iwt} C_q^*(t) dt`` (stationarity),
    trapezoid sampling with the leading endpoint correction, and a frame
    demodulated at ``omega_q + B``.
    """
    spec = pole_decomposition(sol, omega_q, eps)
    duration, half_span = _fft_requirements(sol, spec)
    if T is None or N is None:
        T_d, N_d = fft_grid(sol, omega_q, eps)
        T = T_d if T is None else T
        N = N_d if N is None else N
    if N < 2 or N & (N - 1):
        raise ValueError(f"N must be a power of two, got {N}")
    if T < duration * (1 - 1e-12):
        raise ValueError(f"T={T} shorter than required {duration}")
    dt = T / N
    if math.pi / dt < half_span:
        raise ValueError("sampling too coarse: Nyquist band does not cover the poles")

    t = np.arange(N) * dt
    # demodulated C_q^*: exp(-gamma_m t) exp{A [1 - exp(conj(lam) t)]}
    f = np.conj(correlation(sol, 0.0, t)) * np.exp(1j * sol.shift * t)
    nu = 2 * math.pi * np.fft.fftfreq(N, dt)
    half_line = dt * (N * np.fft.ifft(f) - 0.5 * f[0])
    slope0 = -sol.gamma_m - sol.A * np.conj(sol.decay_exponent)
    half_line += dt * dt / 12 * (1j * nu + slope0)
    order = np.argsort(nu)
    return SampledSpectrum(
        omega=omega_q + sol.shift + nu[order],
        values=2 * half_line.real[order],
        dt=dt,
        duration=T,
    )


def fft_pole_l2_error(sol, omega_q, eps=DEFAULT_TRUNCATION, **kw):
    """Relative L2 mismatch of FFT and pole spectra over the pole window."""
    spec = pole_decomposition(sol, omega_q, eps)
    sampled = spectrum_via_fft(sol, omega_q, eps=eps, **kw)
    _, half_span = _fft_requirements(sol, spec)
    mask = np.abs(sampled.omega - spec.center) <= half_span
    ref = evaluate(spec, sampled.omega[mask])
    diff = sampled.values[mask] - ref
    return float(np.linalg.norm(diff) / np.linalg.norm(ref))
