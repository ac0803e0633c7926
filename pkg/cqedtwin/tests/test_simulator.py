"""
Tests for the virtual device.

The superoperator propagation is checked against direct integration of the master equation, and the shot sampling
against the populations it should reproduce.
"""
import numpy as np
import pytest
from hypothesis import given
from hypothesis.strategies import floats, integers

from cqedtwin.device import Channel, MixerImperfections, PulseSequence, ShotBatch, Trace, evolve_pulse, thermal_state
from cqedtwin.errors import InputError
from cqedtwin.numerics import RngStream
from cqedtwin.simulator import SweepResult, SweepSpec, VirtualDevice
from cqedtwin.tests.conftest import healthy_ground_truth

# Agreement of cached propagators with the adaptive integrator
PROPAGATOR_TOLERANCE = 1e-6
SAMPLE_PERIOD = 1e-9
READOUT_DRIVE = 1e3
# Binomial spread of populations from 1e5 shots is below 2e-3
ECHO_TOLERANCE = 1e-2


def gaussian_envelope(amplitude, n, sigma):
    """Oracle pulse shape, centred in n samples"""
    t = np.arange(n) - 0.5 * (n - 1)
    return amplitude * np.exp(-0.5 * (t / sigma) ** 2)


def readout(start, n=400, acquire='shots'):
    return Channel('readout', np.full(n, READOUT_DRIVE, dtype=complex), start=start, acquire=acquire)


def pi_pulse(gt, n=40):
    return Channel('qubit', np.full(n, np.pi / (gt.drive_rate * n * SAMPLE_PERIOD), dtype=complex))


def test_sweep_spec_unknownKind_raisesInputError():
    """Only the known sweep kinds are accepted"""
    with pytest.raises(InputError):
        SweepSpec('wigner')


def test_sweep_spec_noAverages_raisesInputError():
    """A sweep needs at least one average"""
    with pytest.raises(InputError):
        SweepSpec('s21', n_averages=0)


@given(amplitude=floats(0.01, 0.5), phase=floats(-np.pi, np.pi), detuning=floats(-5e6, 5e6))
def test_final_state_gaussianPulse_matchesIntegrator(amplitude, phase, detuning):
    """The product of cached propagators agrees with integrating the master equation"""
    gt = healthy_ground_truth()
    device = VirtualDevice(gt)
    channel = Channel('qubit', gaussian_envelope(amplitude, 24, 4.), phase=phase)
    seq = PulseSequence(SAMPLE_PERIOD, [channel], drive_frequency=gt.qubit_frequency + detuning)
    _, trajectory = evolve_pulse(seq, thermal_state(gt.p_thermal), gt)
    assert np.max(np.abs(device.final_state(seq) - trajectory[-1])) < PROPAGATOR_TOLERANCE


def test_run_sequence_readoutOnly_returnsOneBatch(device, rng):
    """One acquiring readout gives one batch of the requested size"""
    results = device.execute(PulseSequence(SAMPLE_PERIOD, [readout(0.)]), n_shots=100, rng=rng)
    assert len(results) == 1
    assert isinstance(results[0], ShotBatch)
    assert results[0].n_shots == 100


def test_run_sequence_piPulse_shotsFoundExcited(ground_truth, device, rng):
    """After a pi pulse nearly every shot starts the readout in the excited state"""
    pulse = pi_pulse(ground_truth)
    seq = PulseSequence(SAMPLE_PERIOD, [pulse, readout(len(pulse.envelope) * SAMPLE_PERIOD)])
    batch = device.execute(seq, n_shots=400, rng=rng)[0]
    assert np.mean(batch.true_states) > 0.95


def test_run_sequence_groundState_consecutiveReadoutsStayInGround(device, rng):
    """A cold qubit with no drive is found in the ground state by every readout"""
    seq = PulseSequence(SAMPLE_PERIOD, [readout(0.), readout(400 * SAMPLE_PERIOD)])
    first, second = device.execute(seq, n_shots=200, rng=rng)
    assert not np.any(first.true_states)
    assert not np.any(second.true_states)


def test_run_sequence_excitedThenReadTwice_secondFollowsFirst(ground_truth, device, rng):
    """A shot found in the ground state by a readout stays there for the next one"""
    pulse = pi_pulse(ground_truth)
    n = len(pulse.envelope)
    seq = PulseSequence(SAMPLE_PERIOD, [pulse, readout(n * SAMPLE_PERIOD), readout((n + 400) * SAMPLE_PERIOD)])
    first, second = device.execute(seq, n_shots=300, rng=rng)
    assert not np.any(second.true_states[first.post_states == 0])


def test_run_sequence_pulseDuringReadout_raisesInputError(ground_truth, device, rng):
    """Qubit controls may not overlap a readout"""
    seq = PulseSequence(SAMPLE_PERIOD, [pi_pulse(ground_truth), readout(10 * SAMPLE_PERIOD)])
    with pytest.raises(InputError):
        device.execute(seq, n_shots=10, rng=rng)


def test_run_sequence_traceAcquisition_returnsTraceOnGrid(device, rng):
    """A trace readout returns the averaged field on the readout grid"""
    result = device.execute(PulseSequence(SAMPLE_PERIOD, [readout(0., n=200, acquire='trace')]), 50, rng)[0]
    assert isinstance(result, Trace)
    assert len(result.signal) == 201


@given(seed=integers(0, 2 ** 32))
def test_run_sequence_sameStream_reproducible(seed):
    """Identical streams give identical outcomes"""
    device = VirtualDevice(healthy_ground_truth(n_th=0.01))
    seq = PulseSequence(SAMPLE_PERIOD, [readout(0., n=100)])
    first = device.execute(seq, 50, RngStream(seed))[0]
    second = device.execute(seq, 50, RngStream(seed))[0]
    assert np.array_equal(first.outcomes, second.outcomes)


def test_execute_many_childStreams_matchIndividualRuns(device, rng):
    """Sequence i of a batch runs on child stream i"""
    seq = PulseSequence(SAMPLE_PERIOD, [readout(0., n=100)])
    batched = device.execute_many([seq, seq], 20, rng)
    single = device.run_sequence(seq, 20, rng.child(1))
    assert np.array_equal(batched[1][0].outcomes, single[0].outcomes)


def test_execute_many_threads_matchSerialRun(ground_truth, rng):
    """A pool of worker threads returns the serial result, in order"""
    sequences = [PulseSequence(SAMPLE_PERIOD, [pi_pulse(ground_truth, n=n), readout(n * SAMPLE_PERIOD, n=100)])
                 for n in (20, 30, 40, 50)]
    serial = VirtualDevice(ground_truth).execute_many(sequences, 50, rng)
    threaded = VirtualDevice(ground_truth, processes=4).execute_many(sequences, 50, rng)
    assert len(threaded) == len(serial)
    for first, second in zip(serial, threaded):
        assert np.array_equal(first[0].outcomes, second[0].outcomes)


def test_inject_frequency_offset_shiftsHiddenFrequency(ground_truth):
    """Injected drift moves the qubit and leaves the rest alone"""
    device = VirtualDevice(ground_truth)
    device.inject_frequency_offset(50e3)
    assert device.ground_truth.qubit_frequency == ground_truth.qubit_frequency + 50e3
    assert device.ground_truth.t1 == ground_truth.t1


def test_sweep_s21_powerAxis_oneRowPerPower(device, rng):
    """A power axis adds a leading dimension"""
    spec = SweepSpec('s21', axes={'frequency': np.linspace(7.19e9, 7.21e9, 11), 'power_dbm': [-130., -100., -70.]})
    result = device.execute(spec, rng=rng)
    assert isinstance(result, SweepResult)
    assert result.data.shape == (3, 11)


def test_sweep_s21_missingAxis_raisesInputError(device, rng):
    """Transmission needs a frequency axis"""
    with pytest.raises(InputError):
        device.execute(SweepSpec('s21', axes={'power_dbm': [-100.]}), rng=rng)


def test_sweep_zz_echo_manyAverages_oscillatesAtHalfZeta(rng):
    """The echo signal on qubit i oscillates at zeta/2 whatever the static detuning"""
    zeta = 200e3
    device = VirtualDevice(healthy_ground_truth(zz_matrix=((0., zeta), (zeta, 0.))))
    tau = np.linspace(0., 5e-6, 21)
    spec = SweepSpec('zz_echo', axes={'delay': tau}, settings={'detuning': 1e6}, n_averages=10 ** 6)
    data = device.execute(spec, rng=rng).data
    contrast = np.exp(-tau / device.ground_truth.t2_star)
    assert np.allclose(data[0], 0.5 * (1. - contrast * np.cos(np.pi * zeta * tau)), atol=5e-3)
    assert np.allclose(data[1], 0.5 * (1. - contrast * np.sin(np.pi * zeta * tau)), atol=5e-3)


@given(jitter=floats(1e5, 5e6))
def test_sweep_zz_echo_noZz_driftAndStaticDetuningRefocused(jitter):
    """Without ZZ the echo refocuses any quasi-static detuning and only the coherence decay remains"""
    device = VirtualDevice(healthy_ground_truth())
    tau = np.linspace(0., 40e-6, 9)
    spec = SweepSpec('zz_echo', axes={'delay': tau}, settings={'detuning': 3e6, 'detuning_jitter': jitter},
                     n_averages=10 ** 5)
    data = device.execute(spec, rng=RngStream(8)).data
    contrast = np.exp(-tau / device.ground_truth.t2_star)
    assert np.allclose(data[0], 0.5 * (1. - contrast), atol=ECHO_TOLERANCE)
    assert np.allclose(data[1], 0.5, atol=ECHO_TOLERANCE)


def test_sweep_mixer_spectrum_offsetsCancelLeak_carrierAtFloor(rng):
    """Offsets equal to the leakage null the carrier down to the analyser floor"""
    leak = 0.002 - 0.001j
    device = VirtualDevice(healthy_ground_truth(mixer=MixerImperfections(lo_leak=leak)))
    spec = SweepSpec('mixer_spectrum', settings={'i_offset': leak.real, 'q_offset': leak.imag})
    p_lo, p_usb, _ = device.execute(spec, rng=rng).data
    assert p_lo == pytest.approx(device.spectrum_floor)
    assert p_usb == pytest.approx(1., rel=1e-6)


def test_sweep_qubit_spectroscopy_peakAtQubitFrequency(ground_truth, device, rng):
    """The measured line peaks at the qubit frequency"""
    f = ground_truth.qubit_frequency + np.linspace(-1e6, 1e6, 41)
    spec = SweepSpec('qubit_spectroscopy', axes={'frequency': f}, settings={'drive_rate': 2 * np.pi * 100e3},
                     n_averages=10 ** 5)
    data = device.execute(spec, rng=rng).data
    assert f[np.argmax(data)] == pytest.approx(ground_truth.qubit_frequency, abs=100e3)
