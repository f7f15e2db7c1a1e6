"""TLS bath spectral densities and inversion-recovery fitting.

A coherent TLS at ``omega_tls`` with coupling ``g`` and dephasing
``gamma_2`` contributes the Lorentzian

    S_B(omega) = 2 g^2 gamma_2 / ((omega - omega_tls)^2 + gamma_2^2)

on top of a constant background rate ``1/T1``.  Its fingerprint in an
inversion-recovery trace is the swap-oscillation model

    P_e(t) = a1 cos(2 g t) exp(-gamma_2 t) + a2 exp(-gamma_1 t).
"""

from dataclasses import dataclass, field
import math
from typing import Optional

import numpy as np
from scipy import optimize

from .errors import FitError


@dataclass(frozen=True)
class TLSSpec:
    """One coherent TLS.  ``frequency`` is absolute (rad/us).

    If ``gamma_1`` and ``gamma_phi`` are given they must satisfy
    ``gamma_2 = gamma_1/2 + gamma_phi``; otherwise the master-equation
    oracle treats the TLS as purely relaxing with ``gamma_1 = 2 gamma_2``.
    """

    frequency: float
    coupling: float
    gamma_2: float
    gamma_1: Optional[float] = None
    gamma_phi: Optional[float] = None

    def __post_init__(self):
        for name in ("frequency", "coupling", "gamma_2"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"TLS {name} must be finite")
        if self.coupling < 0:
            raise ValueError(f"TLS coupling must be >= 0, got {self.coupling}")
        if self.gamma_2 <= 0:
            raise ValueError(f"TLS gamma_2 must be positive, got {self.gamma_2}")
        if (self.gamma_1 is None) != (self.gamma_phi is None):
            raise ValueError("give both gamma_1 and gamma_phi or neither")
        if self.gamma_1 is not None:
            if self.gamma_1 < 0 or self.gamma_phi < 0:
                raise ValueError("TLS gamma_1 and gamma_phi must be >= 0")
            if not math.isclose(self.gamma_1 / 2 + self.gamma_phi, self.gamma_2, rel_tol=1e-9):
                raise ValueError("TLS rates violate gamma_2 = gamma_1/2 + gamma_phi")

    @classmethod
    def from_detuning(cls, qubit_frequency, detuning, coupling, gamma_2, **kw):
        return cls(qubit_frequency + detuning, coupling, gamma_2, **kw)

    def relaxation_split(self):
        """``(gamma_1, gamma_phi)`` used by the master-equation oracle."""
        if self.gamma_1 is None:
            return 2 * self.gamma_2, 0.0
        return self.gamma_1, self.gamma_phi


@dataclass(frozen=True)
class BathSpectrum:
    components: tuple = ()
    background: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not math.isfinite(self.background) or self.background < 0:
            raise ValueError(f"background rate must be finite and >= 0, got {self.background}")

    def __call__(self, omega):
        return evaluate_bath(self, omega)

    def with_background(self, background):
        return BathSpectrum(self.components, background)


def evaluate_bath(bath, omega):
    """``S_B(omega)`` in 1/us."""
    omega = np.asarray(omega, dtype=float)
    out = np.full(omega.shape, float(bath.background))
    for tls in bath.components:
        out = out + 2 * tls.coupling**2 * tls.gamma_2 / (
            (omega - tls.frequency) ** 2 + tls.gamma_2**2
        )
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class DecayTrace:
    times: np.ndarray
    populations: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.populations, dtype=float)
        if t.ndim != 1 or t.shape != p.shape:
            raise ValueError("times and populations must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(p))):
            raise ValueError("trace contains non-finite values")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "populations", p)


PARAM_NAMES = ("a1", "a2", "g_tls", "gamma_2", "gamma_1")


def inversion_recovery_model(t, a1, a2, g_tls, gamma_2, gamma_1):
    t = np.asarray(t, dtype=float)
    return a1 * np.cos(2 * g_tls * t) * np.exp(-gamma_2 * t) + a2 * np.exp(-gamma_1 * t)


def _model_jacobian(t, a1, a2, g_tls, gamma_2, gamma_1):
    osc = np.exp(-gamma_2 * t)
    c, s = np.cos(2 * g_tls * t), np.sin(2 * g_tls * t)
    slow = np.exp(-gamma_1 * t)
    return np.column_stack([
        c * osc,
        slow,
        -2 * a1 * t * s * osc,
        -a1 * t * c * osc,
        -a2 * t * slow,
    ])


def synth_inversion_recovery(a1, a2, g_tls, gamma_2, gamma_1, times, noise_sd=0.0, seed=None):
    """Model trace plus seeded Gaussian noise of standard deviation ``noise_sd``."""
    times = np.asarray(times, dtype=float)
    p = inversion_recovery_model(times, a1, a2, g_tls, gamma_2, gamma_1)
    if noise_sd > 0:
        p = p + np.random.default_rng(seed).normal(0.0, noise_sd, size=times.shape)
    return DecayTrace(times, p)


@dataclass(frozen=True)
class TLSFit:
    a1: float
    a2: float
    g_tls: float
    gamma_2: float
    gamma_1: float
    covariance: np.ndarray
    residual_norm: float
    n_iterations: int
    identifiable: bool = True
    warnings: tuple = field(default_factory=tuple)

    @property
    def params(self):
        return np.array([self.a1, self.a2, self.g_tls, self.gamma_2, self.gamma_1])

    @property
    def stderr(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def as_dict(self):
        out = {name: float(v) for name, v in zip(PARAM_NAMES, self.params)}
        out.update(
            {f"{name}_stderr": float(e) for name, e in zip(PARAM_NAMES, self.stderr)}
        )
        out["residual_norm"] = self.residual_norm
        out["identifiable"] = self.identifiable
        out["warnings"] = list(self.warnings)
        return out


MIN_SAMPLES = 20

_LOWER = np.array([-1.5, -1.5, 0.0, 1e-9, 1e-9])
_UPPER = np.array([1.5, 1.5, np.inf, np.inf, np.inf])


def _nyquist_coupling(t):
    """Largest ``g_tls`` whose swap oscillation ``cos(2 g t)`` is not aliased."""
    return math.pi / (2 * float(np.min(np.diff(t))))


def _linear_amplitudes(t, p, g_tls, gamma_2, gamma_1):
    basis = np.column_stack([np.cos(2 * g_tls * t) * np.exp(-gamma_2 * t), np.exp(-gamma_1 * t)])
    coef, *_ = np.linalg.lstsq(basis, p, rcond=None)
    coef = np.clip(coef, _LOWER[:2], _UPPER[:2])
    return coef, float(np.sum((basis @ coef - p) ** 2))


def initial_guess(trace, n_best=1):
    """Starting points from a coarse grid search.

    The slow rate comes from a log-linear fit to the late half of the
    trace.  ``g_tls`` and ``gamma_2`` are scanned on log grids with the
    amplitudes solved linearly at each node.  Returns the best node, or
    the ``n_best`` best nodes as rows when ``n_best > 1``.
    """
    t, p = trace.times, trace.populations
    span = t[-1] - t[0]
    late = t >= t[0] + 0.5 * span
    slope, _ = np.polyfit(t[late], np.log(np.clip(p[late], 1e-6, None)), 1)
    gamma_1 = max(-slope, 1e-3 / span)

    g_max = 0.9 * _nyquist_coupling(t)
    g_grid = np.concatenate(([0.0], np.geomspace(0.25 / span, g_max, 48)))
    g2_grid = np.geomspace(1.0 / span, 0.5 / float(np.min(np.diff(t))), 12)
    nodes = []
    for g in g_grid:
        for g2 in g2_grid:
            (a1, a2), cost = _linear_amplitudes(t, p, g, g2, gamma_1)
            nodes.append((cost, [a1, a2, g, g2, gamma_1]))
    nodes.sort(key=lambda n: n[0])
    best = np.array([n[1] for n in nodes[:n_best]])
    return best[0] if n_best == 1 else best


def _single_exponential(t, p, a0, rate0):
    """Fit ``a2 exp(-gamma_1 t)``; covariance is embedded in the 5x5 layout."""
    def resid(x):
        return x[0] * np.exp(-x[1] * t) - p

    def jac(x):
        e = np.exp(-x[1] * t)
        return np.column_stack([e, -x[0] * t * e])

    res = optimize.least_squares(
        resid, [a0, max(rate0, 1e-9)], jac=jac, bounds=([_LOWER[1], _LOWER[4]], [_UPPER[1], _UPPER[4]]),
        method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15,
    )
    s2 = 2 * res.cost / max(len(t) - 2, 1)
    small = np.linalg.pinv(res.jac.T @ res.jac) * s2
    cov = np.full((5, 5), np.inf)
    idx = [1, 4]
    cov[np.ix_(idx, idx)] = small
    return float(res.x[0]), float(res.x[1]), cov, res


def fit_inversion_recovery(trace, initial=None, max_iterations=2000, n_starts=4):
    """Least-squares fit of the swap-oscillation model.

    Trust-region least squares with an analytic Jacobian, started from the
    ``n_starts`` best grid-search nodes (plus ``initial`` if given).
    ``g_tls`` is bounded below the sampling Nyquist limit so that aliased
    oscillation frequencies are excluded.  Raises :class:`FitError` if no
    start converges.
    """
    t, p = trace.times, trace.populations
    if len(t) < MIN_SAMPLES:
        raise FitError(f"need at least {MIN_SAMPLES} samples, got {len(t)}")
    upper = _UPPER.copy()
    upper[2] = _nyquist_coupling(t)

    def resid(x):
        return inversion_recovery_model(t, *x) - p

    def jac(x):
        return _model_jacobian(t, *x)

    starts = list(np.atleast_2d(initial_guess(trace, n_best=max(n_starts, 1))))
    if initial is not None:
        starts.insert(0, np.asarray(initial, dtype=float))

    best = None
    for x in starts:
        x = np.clip(x, _LOWER + 1e-12, np.minimum(upper - 1e-12, np.maximum(x, _LOWER) + 1e6))
        res = optimize.least_squares(
            resid, x, jac=jac, bounds=(_LOWER, upper), method="trf",
            x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_iterations,
        )
        if res.status > 0 and (best is None or res.cost < best.cost):
            best = res
        elif best is None and res.status <= 0:
            failed = res
    if best is None:
        raise FitError(
            f"fit did not converge: {failed.message}",
            {"best_params": dict(zip(PARAM_NAMES, failed.x.tolist())), "cost": float(failed.cost)},
        )

    J = best.jac
    dof = max(len(t) - len(best.x), 1)
    s2 = 2 * best.cost / dof
    warnings = []
    identifiable = True
    sv = np.linalg.svd(J, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        identifiable = False
        warnings.append("degenerate Jacobian")
        cov = np.full((5, 5), np.inf)
    else:
        cov = np.linalg.pinv(J.T @ J) * s2
    a1, a2, g_tls, gamma_2, gamma_1 = best.x
    span = t[-1] - t[0]
    if 2 * g_tls * span < math.pi and abs(a2) <= 2 * math.sqrt(max(cov[1, 1], 0)):
        # no swap half-period inside the trace and the slow term is empty: the
        # "oscillating" term is a plain exponential, so report it as a2, gamma_1
        a2, gamma_1, cov, best = _single_exponential(t, p, a1, gamma_2)
        a1, g_tls = 0.0, 0.0
        s2 = 2 * best.cost / max(len(t) - 2, 1)
        warnings.append("no swap oscillation resolved; trace is a single exponential")
    scale = max(abs(a1), abs(a2), 1e-300)
    if abs(a1) + abs(a2) < 3 * math.sqrt(s2):
        identifiable = False
        warnings.append("decay amplitude comparable to the residual noise; no resolvable relaxation")
    elif abs(a1) < 1e-3 * scale or abs(a1) <= 2 * math.sqrt(max(cov[0, 0], 0)):
        identifiable = False
        warnings.append("oscillating amplitude a1 indistinguishable from zero; g_tls and gamma_2 unidentifiable")
    elif np.isfinite(cov[2, 2]) and math.sqrt(cov[2, 2]) > abs(g_tls):
        identifiable = False
        warnings.append("g_tls uncertainty exceeds its value")
    if t[-1] - t[0] < 3 / gamma_2:
        warnings.append("trace spans fewer than 3 oscillation decay times")

    return TLSFit(
        a1=float(a1), a2=float(a2), g_tls=float(g_tls), gamma_2=float(gamma_2),
        gamma_1=float(gamma_1), covariance=cov,
        residual_norm=float(np.linalg.norm(best.fun)), n_iterations=int(best.nfev),
        identifiable=identifiable, warnings=tuple(warnings),
    )


def bath_from_fit(fit, tls_frequency, background):
    """Bath spectrum with one Lorentzian built from fitted ``g_tls``, ``gamma_2``."""
    if fit.g_tls < 0 or fit.gamma_2 < 0 or fit.gamma_1 < 0:
        raise ValueError("fitted rates must be non-negative")
    if background < 0:
        raise ValueError("background rate must be non-negative")
    if fit.g_tls == 0 or fit.a1 == 0:
        return BathSpectrum((), background)
    return BathSpectrum((TLSSpec(tls_frequency, fit.g_tls, fit.gamma_2),), background)
