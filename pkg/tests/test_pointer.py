import math

import numpy as np
import pytest
from hypothesis import given, settings
from scipy.integrate import solve_ivp

from readout_t1.errors import LevelingError
from readout_t1.pointer import (
    DeviceParams,
    DriveSpec,
    amplitude_for_gamma_m,
    amplitude_for_separation,
    closed_form_gamma_m,
    closed_form_shift,
    level_drive_amplitude,
    solve_pointer_states,
    transient_field,
)

from conftest import OMEGA_R, symmetric_device, mhz, pointer_solutions, asymmetric_device


def integrate_fields(device, drive, t_end, alpha0=(0j, 0j)):
    """Classical cavity equations of motion for the ``e`` and ``g`` branches."""
    d, u, v = drive.amplitude, drive.u, drive.v
    ke, kg = device.kappa * drive.x**2, device.kappa * drive.y**2
    delta, chi = drive.detuning, device.chi

    def rhs(t, y):
        ae, ag = y[0] + 1j * y[1], y[2] + 1j * y[3]
        dae = -1j * u * d - 1j * (chi - delta) * ae - ke / 2 * ae
        dag = -1j * v * d + 1j * delta * ag - kg / 2 * ag
        return [dae.real, dae.imag, dag.real, dag.imag]

    y0 = [alpha0[0].real, alpha0[0].imag, alpha0[1].real, alpha0[1].imag]
    out = solve_ivp(rhs, (0, t_end), y0, method="DOP853", rtol=1e-12, atol=1e-14)
    y = out.y[:, -1]
    return y[0] + 1j * y[1], y[2] + 1j * y[3]


def test_symmetric_loss_gamma_m_at_unit_separation():
    dev = symmetric_device("a")
    drive = DriveSpec.for_device(dev, dev.resonator_frequency, 1.0)
    drive = drive.with_amplitude(amplitude_for_separation(dev, drive, 1.0))
    sol = solve_pointer_states(dev, drive)
    assert abs(sol.delta_alpha) == pytest.approx(1.0, rel=1e-12)
    assert sol.gamma_m / (2 * math.pi) == pytest.approx(2.5, rel=1e-10)


def test_zero_drive_gives_vacuum():
    dev = asymmetric_device()
    sol = solve_pointer_states(dev, DriveSpec.for_device(dev, dev.resonator_frequency, 0.0))
    assert sol.alpha_g == 0 and sol.alpha_e == 0 and sol.delta_alpha == 0
    assert sol.gamma_m == 0 and sol.A == 0


def test_unit_separation_amplitude_for_chi_equal_minus_kappa():
    kappa = mhz(5.0)
    dev = DeviceParams(0.0, OMEGA_R, -kappa, kappa)
    drive = DriveSpec.for_device(dev, dev.resonator_frequency, 1.0)
    d = amplitude_for_separation(dev, drive, 1.0)
    assert d == pytest.approx(kappa * math.sqrt(5) / 4, rel=1e-12)
    assert d / (2 * math.pi) == pytest.approx(2.795, abs=5e-4)
    # the steady state of the cavity equations of motion has the same separation
    ae, ag = integrate_fields(dev, drive.with_amplitude(d), 80 / kappa)
    assert abs(ae - ag) == pytest.approx(1.0, rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(pointer_solutions(min_separation=0.1))
def test_steady_state_matches_equations_of_motion(sol):
    ae, ag = integrate_fields(sol.device, sol.drive, 60 / min(sol.kappa_g, sol.kappa_e))
    scale = max(abs(sol.alpha_e), abs(sol.alpha_g))
    assert abs(ae - sol.alpha_e) <= 1e-8 * scale
    assert abs(ag - sol.alpha_g) <= 1e-8 * scale


@settings(max_examples=200, deadline=None)
@given(pointer_solutions())
def test_gamma_m_matches_output_field_distinguishability(sol):
    assert sol.gamma_m == pytest.approx(closed_form_gamma_m(sol), rel=1e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(pointer_solutions())
def test_shift_matches_quoted_closed_form(sol):
    assert sol.shift == pytest.approx(closed_form_shift(sol), rel=1e-6, abs=1e-12)


def test_transient_initial_and_final_values():
    sol = solve_pointer_states(symmetric_device("a"), DriveSpec(0.0, mhz(2.0)))
    ae, ag = transient_field(sol, 0.0)
    assert ae == sol.alpha_e
    assert ag == pytest.approx(sol.alpha_e, abs=1e-15)
    _, ag_late = transient_field(sol, 200 / sol.kappa_g)
    assert ag_late == pytest.approx(sol.alpha_g, abs=1e-12)


def test_transient_at_two_over_kappa_g():
    dev = symmetric_device("a")
    drive = DriveSpec(0.0, mhz(2.0))
    sol = solve_pointer_states(dev, drive)
    t = 2 / sol.kappa_g
    _, ag = transient_field(sol, t)
    assert ag == pytest.approx(sol.delta_alpha * math.exp(-1) + sol.alpha_g, abs=1e-13)
    _, ag_ode = integrate_fields(dev, drive, t, alpha0=(sol.alpha_e, sol.alpha_e))
    assert ag == pytest.approx(ag_ode, abs=1e-9)


def test_transient_rejects_negative_time():
    sol = solve_pointer_states(symmetric_device("a"), DriveSpec(0.0, 1.0))
    with pytest.raises(ValueError):
        transient_field(sol, -1.0)


def test_snr_leveling_target():
    dev = asymmetric_device()
    freq = dev.resonator_frequency
    d = level_drive_amplitude(dev, freq, 3.0)
    sol = solve_pointer_states(dev, DriveSpec.for_device(dev, freq, d))
    assert sol.gamma_m == pytest.approx(3.0 / (4 * 0.1294), rel=1e-12)


def test_snr_leveling_rejects_nonpositive_target():
    dev = asymmetric_device()
    for bad in (0.0, -1.0, float("nan")):
        with pytest.raises(LevelingError):
            level_drive_amplitude(dev, dev.resonator_frequency, bad)


@settings(max_examples=50, deadline=None)
@given(pointer_solutions(min_separation=0.1))
def test_doubling_snr_rate_scales_amplitude_by_sqrt2(sol):
    dev = DeviceParams(
        sol.device.qubit_frequency, sol.device.resonator_frequency, sol.device.chi,
        sol.device.kappa, sol.device.delta_p, eta=0.5,
    )
    freq = sol.drive.drive_frequency(dev)
    d1 = level_drive_amplitude(dev, freq, 1.0)
    d2 = level_drive_amplitude(dev, freq, 2.0)
    assert d2 / d1 == pytest.approx(math.sqrt(2), rel=1e-12)


def test_gamma_m_leveling_and_validation():
    dev = asymmetric_device()
    drive = DriveSpec.for_device(dev, dev.canonical_drive_frequency("mid"), 1.0)
    d = amplitude_for_gamma_m(dev, drive, 7.0)
    assert solve_pointer_states(dev, drive.with_amplitude(d)).gamma_m == pytest.approx(7.0, rel=1e-12)
    with pytest.raises(LevelingError):
        amplitude_for_gamma_m(dev, drive, -1.0)
    with pytest.raises(LevelingError):
        amplitude_for_separation(dev, drive, -0.5)


def test_linewidth_constructor_round_trip():
    dev = asymmetric_device()
    assert dev.kappa_g == pytest.approx(mhz(9.0), rel=1e-14)
    assert dev.kappa_e == pytest.approx(mhz(6.6), rel=1e-14)
    assert dev.resonator_frequency_e == dev.resonator_frequency + dev.chi


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kappa": 0.0},
        {"kappa": -1.0},
        {"delta_p": 2.0},
        {"eta": 0.0},
        {"eta": 1.5},
        {"chi": float("nan")},
    ],
)
def test_device_validation(kwargs):
    base = {"qubit_frequency": 0.0, "resonator_frequency": OMEGA_R, "chi": -1.0, "kappa": 1.0}
    base.update(kwargs)
    with pytest.raises(ValueError):
        DeviceParams(**base)


def test_negative_amplitude_rejected():
    with pytest.raises(ValueError):
        DriveSpec(0.0, -1.0)


def test_canonical_points():
    dev = symmetric_device("b")
    assert dev.canonical_drive_frequency("g") == dev.resonator_frequency
    assert dev.canonical_drive_frequency("e") == dev.resonator_frequency + dev.chi
    assert dev.canonical_drive_frequency("mid") == pytest.approx(dev.resonator_frequency + dev.chi / 2)
    with pytest.raises(ValueError):
        dev.canonical_drive_frequency("x")


@settings(max_examples=100, deadline=None)
@given(pointer_solutions())
def test_gamma_m_nonnegative_and_finite(sol):
    assert sol.gamma_m >= 0
    assert np.isfinite([sol.shift, sol.A.real, sol.A.imag]).all()
