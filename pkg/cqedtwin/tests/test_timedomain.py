"""
Tests for the time-domain experiments.

The fits are checked on noiseless synthetic curves where the parameters are known exactly, the experiments against
the hidden parameters of a simulated device.
"""
import numpy as np
import pytest
from hypothesis import given
from hypothesis.strategies import floats

from cqedtwin.errors import CalibrationError, InputError
from cqedtwin.numerics import RngStream
from cqedtwin.recovery import oracle_pi_amplitude, settings_from_ground_truth
from cqedtwin.simulator import VirtualDevice
from cqedtwin.tests.conftest import healthy_ground_truth
from cqedtwin.timedomain import ControlSettings, coherence_consistent, drag_pulse, exponential_decay, fit_echo, \
    fit_rabi, fit_ramsey, fit_T1, gate_sequence, measure_echo, measure_ramsey, measure_T1, rabi_calibration, \
    rabi_signal, ramsey_fringe, repeated_ramsey_frequency_cal, stretched_decay

# Relative accuracy of fits to noiseless data
FIT_TOLERANCE = 1e-4
# Relative accuracy of coherence times measured on the simulated device
COHERENCE_TOLERANCE = 0.2
# Relative agreement of T2* with 2 T1 when nothing but relaxation dephases
T2_LIMIT_TOLERANCE = 0.1
EPSILON = 1e-12


def test_drag_pulse_edges_exactlyZero():
    """Both ends of the envelope vanish"""
    envelope = drag_pulse(0.5, 0.3, 4e-9, 16e-9).envelope
    assert abs(envelope[0]) < EPSILON
    assert abs(envelope[-1]) < EPSILON


def test_drag_pulse_peak_isAmplitude():
    """The in-phase envelope peaks at the given amplitude"""
    envelope = drag_pulse(0.5, 0.3, 4e-9, 16e-9).envelope
    assert np.max(envelope.real) == pytest.approx(0.5)


@given(drag=floats(-1., 1.))
def test_drag_pulse_quadrature_integratesToZero(drag):
    """The derivative quadrature is odd about the centre"""
    envelope = drag_pulse(0.5, drag, 4e-9, 20e-9).envelope
    assert abs(envelope.imag.sum()) < 1e-9


def test_drag_pulse_shortWindow_raisesInputError():
    """A window shorter than four sigma truncates the Gaussian"""
    with pytest.raises(InputError):
        drag_pulse(0.5, 0., 5e-9, 16e-9)


def test_gate_sequence_mismatchedWaits_raisesInputError(calibrated):
    """Every gate needs a wait"""
    with pytest.raises(InputError):
        gate_sequence(calibrated, ['X', 'x'], waits=[0.])


def test_gate_sequence_unknownGate_raisesInputError(calibrated):
    """Only named gates are accepted"""
    with pytest.raises(InputError):
        gate_sequence(calibrated, ['Z'])


def test_gate_sequence_uncalibrated_raisesInputError():
    """Gates need a calibrated pi amplitude"""
    with pytest.raises(InputError):
        gate_sequence(ControlSettings(readout_frequency=7e9), ['X'])


def test_populations_calibrationPoints_zeroAndOne():
    """The calibration points project onto populations zero and one"""
    settings = ControlSettings(ground_point=1. + 1j, excited_point=-2. + 0.5j)
    assert np.allclose(settings.populations([1. + 1j, -2. + 0.5j, -0.5 + 0.75j]), [0., 1., 0.5])


def test_populations_coincidentPoints_raisesCalibrationError():
    """Identical calibration points cannot define an axis"""
    with pytest.raises(CalibrationError):
        ControlSettings(ground_point=1j, excited_point=1j).populations([0.])


@given(pi_amplitude=floats(0.2, 0.8))
def test_fit_rabi_noiseless_recoversPiAmplitude(pi_amplitude):
    """A noiseless cosine gives back its half period"""
    a = np.linspace(0., 1., 41)
    fit = fit_rabi(a, rabi_signal(a, 0.1, 2., pi_amplitude))
    assert fit['pi_amplitude'] == pytest.approx(pi_amplitude, rel=FIT_TOLERANCE)


@given(t1=floats(10e-6, 100e-6))
def test_fit_T1_noiseless_recoversDecayTime(t1):
    """A noiseless exponential gives back its decay time"""
    t = np.linspace(0., 300e-6, 51)
    fit = fit_T1(t, exponential_decay(t, 0.95, t1, 0.02))
    assert fit['t1'] == pytest.approx(t1, rel=FIT_TOLERANCE)


def test_fit_echo_fixedStretch_dropsStretchParameter():
    """A fixed stretch leaves three parameters"""
    t = np.linspace(0., 200e-6, 41)
    fit = fit_echo(t, stretched_decay(t, -0.5, 60e-6, 2., 0.5), stretch=2.)
    assert fit.names == ('amplitude', 't2_echo', 'offset')
    assert fit['t2_echo'] == pytest.approx(60e-6, rel=FIT_TOLERANCE)


@given(frequency=floats(500e3, 1.5e6), t2=floats(15e-6, 40e-6))
def test_fit_ramsey_noiseless_recoversFrequency(frequency, t2):
    """A noiseless fringe gives back its frequency and decay"""
    t = np.arange(101) * 50e-9
    fit = fit_ramsey(t, ramsey_fringe(t, 0.5, t2, 1., frequency, 0., 0.5), stretch=1.)
    assert fit['frequency'] == pytest.approx(frequency, rel=FIT_TOLERANCE)
    assert fit['t2_star'] == pytest.approx(t2, rel=1e-3)


def test_fit_ramsey_envelopeOffset_addsParameter():
    """The variant fit carries an envelope offset"""
    t = np.arange(101) * 50e-9
    fit = fit_ramsey(t, ramsey_fringe(t, 0.5, 20e-6, 1., 1e6, 0., 0.5), fit_envelope_offset=True)
    assert 'envelope_offset' in fit.names
    assert fit['envelope_offset'] == pytest.approx(0., abs=1e-4)


def test_coherence_consistent_t2AboveTwiceT1_inconsistent():
    """T2 well above 2 T1 is unphysical"""
    assert not coherence_consistent(20e-6, 0.1e-6, 60e-6, 0.1e-6)
    assert coherence_consistent(50e-6, 1e-6, 60e-6, 1e-6)


def test_rabi_calibration_device_findsPiAmplitude(ground_truth, device, calibrated):
    """The Rabi fit finds the amplitude that inverts the qubit"""
    result = rabi_calibration(device, calibrated, RngStream(3), n_shots=200)
    assert result.pi_amplitude == pytest.approx(oracle_pi_amplitude(ground_truth, calibrated), rel=0.03)
    assert result.pi_half_amplitude == pytest.approx(0.5 * result.pi_amplitude)


def test_measure_T1_device_recoversT1(ground_truth, device, calibrated):
    """The relaxation fit recovers the hidden T1"""
    result = measure_T1(device, calibrated, np.linspace(0., 4 * ground_truth.t1, 21), RngStream(4), n_shots=300)
    assert result.fit['t1'] == pytest.approx(ground_truth.t1, rel=COHERENCE_TOLERANCE)
    assert result.flags == ()


def test_measure_ramsey_detunedDrive_fringeAtDetuning(ground_truth, device, calibrated):
    """Driving off resonance by 1 MHz gives a 1 MHz fringe"""
    delays = np.arange(61) * 100e-9
    result = measure_ramsey(device, calibrated, delays, RngStream(6), n_shots=300, stretch=1.,
                            drive_frequency=ground_truth.qubit_frequency - 1e6)
    assert result.fit['frequency'] == pytest.approx(1e6, rel=0.02)


def test_measure_ramsey_noPureDephasing_t2StarIsTwiceT1():
    """Without pure dephasing the fringe decays at half the relaxation rate"""
    gt = healthy_ground_truth(t_phi=np.inf)
    device = VirtualDevice(gt)
    calibrated = settings_from_ground_truth(gt, device, RngStream(7), n_shots=500)
    delays = np.linspace(0., 6 * gt.t1, 101)
    result = measure_ramsey(device, calibrated, delays, RngStream(9), 5. / delays[-1], n_shots=1000, stretch=1.)
    assert result.fit['t2_star'] == pytest.approx(2 * gt.t1, rel=T2_LIMIT_TOLERANCE)


def test_measure_ramsey_envelopeOffset_fitCarriesOffset(device, calibrated):
    """The envelope offset variant reaches the device measurement"""
    delays = np.linspace(0., 100e-6, 61)
    result = measure_ramsey(device, calibrated, delays, RngStream(10), 5. / delays[-1], n_shots=300,
                            fit_envelope_offset=True)
    assert 'envelope_offset' in result.fit.names


def test_measure_echo_markovianDephasing_matchesT2Star(ground_truth, device, calibrated):
    """Without low frequency noise the echo time is T2* itself"""
    result = measure_echo(device, calibrated, np.linspace(0., 3 * ground_truth.t2_star, 21), RngStream(8),
                          n_shots=300, stretch=1.)
    assert result.fit['t2_echo'] == pytest.approx(ground_truth.t2_star, rel=COHERENCE_TOLERANCE)


def test_repeated_ramsey_frequency_cal_offsetQubit_convergesOnTruth(ground_truth, device, calibrated):
    """Starting 300 kHz off, the doubling Ramsey converges on the qubit frequency"""
    start = calibrated.updated(qubit_frequency=ground_truth.qubit_frequency + 300e3)
    result = repeated_ramsey_frequency_cal(device, start, RngStream(9), initial_span=1e6, n_rounds=4, n_shots=200)
    assert result.qubit_frequency == pytest.approx(ground_truth.qubit_frequency, abs=20e3)
    assert len(result.rounds) <= 4


def test_repeated_ramsey_frequency_cal_zeroSpan_raisesInputError(calibrated, device):
    """The starting uncertainty must be positive"""
    with pytest.raises(InputError):
        repeated_ramsey_frequency_cal(device, calibrated, RngStream(0), initial_span=0.)
