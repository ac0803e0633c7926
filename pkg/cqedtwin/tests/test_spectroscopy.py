"""
Tests for the frequency domain characterisation.

Line shape fits are run on noiseless curves produced by the device model itself, the experiments on a simulated
device whose resonances are known.
"""
import numpy as np
import pytest
from hypothesis import given
from hypothesis.strategies import floats

from cqedtwin.device import ReadoutLine, hanger_s21
from cqedtwin.errors import FitError, InputError
from cqedtwin.numerics import RngStream
from cqedtwin.simulator import VirtualDevice
from cqedtwin.spectroscopy import dispersive_shift, fit_lorentzian, fit_resonator, lorentzian, \
    resonator_flux_sweep, resonator_power_scan, resonator_spectroscopy, three_tone_anharmonicity, \
    two_tone_spectroscopy
from cqedtwin.tests.conftest import healthy_ground_truth
from cqedtwin.timedomain import ControlSettings

# Relative accuracy of line shape fits to noiseless data
FIT_TOLERANCE = 1e-4
RESONATOR = 7.2e9
KAPPA = 2 * np.pi * 1e6


@given(center=floats(-2e6, 2e6), half_width=floats(50e3, 500e3))
def test_fit_lorentzian_noiseless_recoversLine(center, half_width):
    """A noiseless peak gives back its centre and width"""
    f = 5e9 + np.linspace(-5e6, 5e6, 401)
    fit = fit_lorentzian(f, lorentzian(f, 5e9 + center, half_width, 0.4, 0.05))
    assert fit['center'] == pytest.approx(5e9 + center, abs=FIT_TOLERANCE * half_width)
    assert fit['half_width'] == pytest.approx(half_width, rel=FIT_TOLERANCE)


@given(coupling=floats(0.3, 0.95), delay=floats(0., 100e-9), phase=floats(-np.pi, np.pi))
def test_fit_resonator_noiselessHanger_recoversRates(coupling, delay, phase):
    """Frequency, linewidth and coupling come back from an ideal hanger response"""
    f = np.linspace(RESONATOR - 10e6, RESONATOR + 10e6, 801)
    line = ReadoutLine(amplitude=0.8, slope=0.02, delay=delay, phase=phase)
    fit = fit_resonator(f, hanger_s21(f, RESONATOR, KAPPA, coupling * KAPPA, line))
    assert fit.frequency == pytest.approx(RESONATOR, abs=FIT_TOLERANCE * 1e6)
    assert fit.kappa == pytest.approx(KAPPA, rel=FIT_TOLERANCE)
    assert fit.kappa_c == pytest.approx(coupling * KAPPA, rel=FIT_TOLERANCE)
    assert fit.line.delay == pytest.approx(delay, abs=1e-12)


def test_fit_resonator_qualityFactors_fromRates():
    """Qc and Qi are 2 pi f_r over the coupling and internal rates"""
    f = np.linspace(RESONATOR - 10e6, RESONATOR + 10e6, 801)
    fit = fit_resonator(f, hanger_s21(f, RESONATOR, KAPPA, 0.8 * KAPPA, ReadoutLine()))
    assert fit.q_c == pytest.approx(2 * np.pi * RESONATOR / (0.8 * KAPPA), rel=1e-3)
    assert fit.q_i == pytest.approx(2 * np.pi * RESONATOR / (0.2 * KAPPA), rel=1e-3)


def test_fit_resonator_fewPoints_raisesInputError():
    """Sixteen points are the minimum"""
    f = np.linspace(RESONATOR - 10e6, RESONATOR + 10e6, 10)
    with pytest.raises(InputError):
        fit_resonator(f, hanger_s21(f, RESONATOR, KAPPA, 0.5 * KAPPA, ReadoutLine()))


def test_fit_resonator_flatLine_raisesFitError():
    """A transmission without a dip cannot be fitted"""
    f = np.linspace(RESONATOR - 10e6, RESONATOR + 10e6, 201)
    with pytest.raises(FitError):
        fit_resonator(f, np.exp(2j * np.pi * f * 50e-9))


def test_fit_resonator_narrowSpan_raisesInputError():
    """A sweep must cover several linewidths"""
    f = np.linspace(RESONATOR - 1.5e6, RESONATOR + 1.5e6, 201)
    with pytest.raises(InputError):
        fit_resonator(f, hanger_s21(f, RESONATOR, KAPPA, 0.8 * KAPPA, ReadoutLine()))


def test_resonator_spectroscopy_device_findsDressedResonance(ground_truth, device):
    """The low power fit finds the ground state dressed resonance and the resonator rates"""
    settings = ControlSettings(resonator_guess=ground_truth.dressed_resonator_frequency(0) + 1e6)
    fit, _, _ = resonator_spectroscopy(device, settings, RngStream(1))
    assert fit.frequency == pytest.approx(ground_truth.dressed_resonator_frequency(0), abs=20e3)
    assert fit.kappa == pytest.approx(ground_truth.kappa, rel=0.05)
    assert fit.kappa_c == pytest.approx(ground_truth.kappa_c, rel=0.05)


def test_resonator_spectroscopy_noGuess_raisesInputError(device):
    """The sweep needs somewhere to look"""
    with pytest.raises(InputError):
        resonator_spectroscopy(device, ControlSettings(), RngStream(1))


def test_resonator_power_scan_device_lambShiftAndSafePower(ground_truth, device):
    """The line moves from the dressed to the bare frequency and the suggested power stays below n_crit"""
    settings = ControlSettings(resonator_frequency=ground_truth.dressed_resonator_frequency(0))
    scan = resonator_power_scan(device, settings, RngStream(2))
    assert scan.dressed_frequency == pytest.approx(ground_truth.dressed_resonator_frequency(0), abs=20e3)
    assert scan.bare_frequency == pytest.approx(ground_truth.resonator_frequency, abs=50e3)
    assert scan.lamb_shift == pytest.approx(ground_truth.dispersive_at().lamb_shift, rel=0.05)
    # About 147 photons reach the resonator at -49.5 dBm
    assert scan.suggested_power_dbm < -50.


def test_resonator_flux_sweep_tunableQubit_findsSweetSpot():
    """The resonator is pushed highest where the qubit sits closest, at the sweet spot"""
    gt = healthy_ground_truth(flux_period=1e-3, sweet_spot_current=0.1e-3)
    device = VirtualDevice(gt)
    settings = ControlSettings(resonator_frequency=gt.dressed_resonator_frequency(0, 0.1e-3), flux_period_guess=1e-3)
    sweep = resonator_flux_sweep(device, settings, RngStream(3))
    assert sweep.sweet_spot_current == pytest.approx(0.1e-3, abs=15e-6)


def test_resonator_flux_sweep_noGrid_raisesInputError(device):
    """Without a period guess there is no default current grid"""
    with pytest.raises(InputError):
        resonator_flux_sweep(device, ControlSettings(resonator_frequency=7.2e9), RngStream(3))


def test_two_tone_spectroscopy_device_findsQubit(ground_truth, device):
    """The power schedule finds the qubit 20 MHz from the design guess"""
    settings = ControlSettings(qubit_guess=ground_truth.qubit_frequency + 20e6)
    line = two_tone_spectroscopy(device, settings, RngStream(4))
    assert line.frequency == pytest.approx(ground_truth.qubit_frequency, abs=20e3)


def test_three_tone_anharmonicity_device_findsRidge(ground_truth, device):
    """The two-photon ridge gives the anharmonicity"""
    settings = ControlSettings(qubit_frequency=ground_truth.qubit_frequency)
    result = three_tone_anharmonicity(device, settings, RngStream(5))
    assert result.anharmonicity == pytest.approx(ground_truth.anharmonicity, abs=2e6)


def test_dispersive_shift_device_recoversChi(ground_truth, device, calibrated):
    """Sweeps with and without a pi pulse give chi"""
    result = dispersive_shift(device, calibrated, RngStream(6))
    assert result.chi == pytest.approx(ground_truth.chi, rel=0.05)
    assert result.p_excited > 0.9
