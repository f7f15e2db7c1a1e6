import math

import numpy as np
import pytest
from hypothesis import strategies as st

from readout_t1.bath import BathSpectrum, TLSSpec
from readout_t1.pointer import DeviceParams, DriveSpec, amplitude_for_separation, solve_pointer_states

TWO_PI = 2 * math.pi
OMEGA_Q = 0.0
OMEGA_R = TWO_PI * 6779.6


def mhz(x):
    return TWO_PI * x


def symmetric_device(config):
    """Symmetric-loss devices: ``a`` (chi -5, kappa 5) and ``b`` (chi -10, kappa 2.5), MHz/2pi."""
    chi, kappa = {"a": (-5.0, 5.0), "b": (-10.0, 2.5)}[config]
    return DeviceParams(OMEGA_Q, OMEGA_R, mhz(chi), mhz(kappa))


def flanking_bath(config):
    """Two far-detuned TLSs flanking the qubit, gamma_2/2pi = 0.5 MHz."""
    detuning, g = {"a": (10.0, 0.5), "b": (15.0, 0.4)}[config]
    return BathSpectrum(
        (TLSSpec(OMEGA_Q + mhz(detuning), mhz(g), mhz(0.5)),
         TLSSpec(OMEGA_Q - mhz(detuning), mhz(g), mhz(0.5))),
        0.0,
    )


def asymmetric_device(qubit_frequency=OMEGA_Q):
    return DeviceParams.from_linewidths(
        qubit_frequency, OMEGA_R, mhz(-8.8), mhz(9.0), mhz(6.6), eta=0.1294
    )


def near_resonant_bath():
    return BathSpectrum((TLSSpec(OMEGA_Q + mhz(-6.0), mhz(0.19), 1.35),), 0.11)


def solution_at(device, point, separation):
    drive = DriveSpec.for_device(device, device.canonical_drive_frequency(point), 1.0)
    drive = drive.with_amplitude(amplitude_for_separation(device, drive, separation))
    return solve_pointer_states(device, drive)


@st.composite
def pointer_solutions(draw, max_separation=2.0, min_separation=0.0):
    """Random valid device/drive pairs with ``x = u``, ``y = v``."""
    chi = mhz(draw(st.floats(-15.0, -1.0)))
    kappa = mhz(draw(st.floats(1.0, 15.0)))
    delta_p = draw(st.floats(-0.5, 0.5))
    device = DeviceParams(OMEGA_Q, OMEGA_R, chi, kappa, delta_p)
    detuning = draw(st.floats(-2.0, 1.0)) * abs(chi)
    sep = draw(st.floats(min_separation, max_separation))
    drive = DriveSpec.for_device(device, OMEGA_R + detuning, 1.0)
    if sep == 0:
        return solve_pointer_states(device, drive.with_amplitude(0.0))
    drive = drive.with_amplitude(amplitude_for_separation(device, drive, sep))
    return solve_pointer_states(device, drive)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def acceptance(request):
    """Record one criterion verdict; the lines are printed in the terminal summary."""
    results = request.config.stash[ACCEPTANCE_KEY]

    def record(number, title, passed, detail):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        results[number] = line
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
