"""
Time-domain single qubit experiments and the control settings they share.

ControlSettings is everything the calibration pipeline has learned about how to drive and read the qubit: frequencies,
pulse amplitudes, the DRAG coefficient, readout power, integration weights and the IQ calibration points used to turn
averaged signals into excited state populations. It is immutable; nodes return updates and the executor applies them.

The experiments here build PulseSequences from those settings, run them through a device's execute interface and fit
the result:
    * Rabi amplitude calibration, populations taken from a principal component projection of the raw IQ signal
    * T1, Ramsey (with artificial detuning) and Hahn echo
    * The repeated Ramsey frequency calibration, doubling the span each round
"""
import logging
from collections import namedtuple
from dataclasses import dataclass, replace

import numpy as np
from scipy.constants import h

from cqedtwin.device import QUBIT, READOUT, Channel, PulseSequence
from cqedtwin.errors import CalibrationError, FitError, InputError
from cqedtwin.numerics import least_squares_fit

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_PERIOD = 1e-9
DEFAULT_SIGMA = 4e-9
DEFAULT_PULSE_DURATION = 16e-9
DEFAULT_READOUT_DURATION = 1e-6
DEFAULT_SHOTS = 1000
# Rabi contrast must exceed this many standard errors of a point
CONTRAST_NOISE_FACTOR = 3.
# Shots per calibration point, as a multiple of the shots per sweep point
CALIBRATION_POINT_FACTOR = 4
# The repeated Ramsey keeps the fringe frequency below this many cycles per sample
NYQUIST_MARGIN = 0.4
RAMSEY_ROUNDS = 5
RAMSEY_POINTS = 41
# A residual detuning above this fraction of the artificial detuning means an earlier round aliased
ALIAS_FRACTION = 0.5
# Number of standard deviations allowed when checking T2 <= 2 T1
CONSISTENCY_SIGMAS = 3.

# Rotation angle in units of pi and rotation axis phase of each named gate
GATES = {
    'X': (1., 0.),
    'Y': (1., np.pi / 2),
    'x': (0.5, 0.),
    'y': (0.5, np.pi / 2),
    '-X': (-1., 0.),
    '-Y': (-1., np.pi / 2),
    '-x': (-0.5, 0.),
    '-y': (-0.5, np.pi / 2),
    'I': (0., 0.),
}

RabiResult = namedtuple('RabiResult', ['pi_amplitude', 'pi_half_amplitude', 'fit', 'amplitudes', 'signal',
                                       'ground_point', 'excited_point'])
CoherenceFit = namedtuple('CoherenceFit', ['fit', 'delays', 'populations', 'flags'])
RamseyRound = namedtuple('RamseyRound', ['span', 'artificial_detuning', 'detuning', 'stderr', 'drive_frequency'])
RamseyCalibration = namedtuple('RamseyCalibration', ['qubit_frequency', 'uncertainty', 't2_star', 'rounds'])


@dataclass(frozen=True)
class ControlSettings:
    """
    What the pipeline knows about operating the qubit.

    Fields ending in _guess are design values used to place the first searches; every other field is set by a
    calibration node.

    Vars:
        sample_period (float): AWG sample period, s
        flux_bias (float): Static bias current, A
        resonator_frequency (float): Dressed resonator frequency with the qubit in the ground state, Hz
        readout_frequency (float): Readout tone, Hz
        readout_power_dbm (float): Readout power at the generator, dBm
        input_attenuation_db (float): Known attenuation of the input line, dB
        readout_duration (float): Readout pulse length, s
        qubit_frequency (float): Qubit drive frequency, Hz
        anharmonicity (float): f01 - f12, Hz
        chi (float): Dispersive shift, Hz
        pi_amplitude (float): Envelope amplitude of a pi rotation
        pi_half_amplitude (float): Envelope amplitude of a pi/2 rotation
        drag (float): DRAG coefficient
        sigma (float): Gaussian width of gate pulses, s
        pulse_duration (float): Gate pulse length, s
        ground_point (complex): Averaged integrated signal of the ground state
        excited_point (complex): Averaged integrated signal of the excited state
        weights (np.ndarray): Integration weights, None for a boxcar
        threshold (Threshold): Single shot discrimination threshold
        t1, t2_star (float): Latest coherence estimates, s
        t1_error (float): Standard error of t1, s
    """
    sample_period: float = DEFAULT_SAMPLE_PERIOD
    flux_bias: float = 0.
    resonator_frequency: float = None
    readout_frequency: float = None
    readout_power_dbm: float = None
    input_attenuation_db: float = 70.
    readout_duration: float = DEFAULT_READOUT_DURATION
    qubit_frequency: float = None
    anharmonicity: float = None
    chi: float = None
    pi_amplitude: float = None
    pi_half_amplitude: float = None
    drag: float = 0.
    sigma: float = DEFAULT_SIGMA
    pulse_duration: float = DEFAULT_PULSE_DURATION
    ground_point: complex = None
    excited_point: complex = None
    weights: np.ndarray = None
    threshold: object = None
    t1: float = None
    t2_star: float = None
    t1_error: float = None
    resonator_guess: float = None
    qubit_guess: float = None
    anharmonicity_guess: float = 250e6
    t1_guess: float = 30e-6
    t2_guess: float = 20e-6
    flux_period_guess: float = None
    tunable: bool = False

    def updated(self, **changes):
        return replace(self, **changes)

    def require(self, *names):
        """Raise if any of the named settings has not been calibrated yet"""
        missing = [name for name in names if getattr(self, name) is None]
        if missing:
            raise InputError("Settings not calibrated yet: " + ", ".join(missing))

    @property
    def readout_amplitude(self):
        """Readout input field at the device in sqrt(photons/s)"""
        self.require('readout_power_dbm', 'resonator_frequency')
        power = 10. ** ((self.readout_power_dbm - 30. - self.input_attenuation_db) / 10.)
        return np.sqrt(power / (h * self.resonator_frequency))

    def samples(self, duration):
        return int(round(duration / self.sample_period))

    def on_grid(self, times):
        """Times rounded to the sample grid"""
        return np.round(np.asarray(times, dtype=float) / self.sample_period) * self.sample_period

    def populations(self, signal):
        """Excited state population from averaged signals, by projection between the calibration points"""
        self.require('ground_point', 'excited_point')
        separation = self.excited_point - self.ground_point
        if separation == 0:
            raise CalibrationError("Calibration points coincide")
        signal = np.asarray(signal, dtype=complex)
        return np.real((signal - self.ground_point) * np.conj(separation)) / abs(separation) ** 2

    def as_dict(self):
        values = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if name == 'weights':
                value = None if value is None else len(value)
            elif name == 'threshold':
                value = None if value is None else value._asdict()
            if isinstance(value, complex):
                value = [value.real, value.imag]
            if isinstance(value, dict):
                value = {k: ([v.real, v.imag] if isinstance(v, complex) else v) for k, v in value.items()}
            values[name] = value
        return values


def drag_pulse(amplitude, drag, sigma, duration, sample_period=DEFAULT_SAMPLE_PERIOD, start=0., phase=0.):
    """
    A Gaussian pulse with a derivative (DRAG) quadrature.

    The in-phase envelope is a Gaussian centred in the window with its edge value subtracted, so that both ends of
    the envelope are exactly zero, rescaled to peak at the given amplitude. The quadrature is
    Q = -drag ((t - mu)/sigma) I, odd about the centre, so it integrates to zero.

    Args:
        amplitude (float): Peak in-phase amplitude G
        drag (float): DRAG coefficient D
        sigma (float): Gaussian width in s
        duration (float): Window length in s, at least 4 sigma
        sample_period (float): Sample period in s
        start (float): Start time on the sample grid, s
        phase (float): Rotation axis phase, rad

    Returns:
        Channel: A qubit channel of round(duration/sample_period) + 1 samples

    Raises:
        InputError: If the window is shorter than 4 sigma or any width is not positive
    """
    if not (sigma > 0 and duration > 0 and sample_period > 0):
        raise InputError("sigma, duration and sample_period must be positive")
    if duration < 4 * sigma * (1. - 1e-9):
        raise InputError("A pulse of width " + str(sigma) + " s needs a window of at least 4 sigma")
    n = int(round(duration / sample_period))
    t = np.arange(n + 1) * sample_period
    mu = 0.5 * n * sample_period
    gaussian = np.exp(-0.5 * ((t - mu) / sigma) ** 2)
    edge = np.exp(-0.5 * (mu / sigma) ** 2)
    in_phase = amplitude * (gaussian - edge) / (1. - edge)
    quadrature = -drag * (t - mu) / sigma * in_phase
    return Channel(QUBIT, in_phase + 1j * quadrature, phase=phase, start=start)


def gate_pulse(gate, settings, start=0., phase=0.):
    """The calibrated pulse of a named gate, or None for the identity"""
    if gate not in GATES:
        raise InputError("Unknown gate " + repr(gate))
    settings.require('pi_amplitude', 'pi_half_amplitude')
    turns, axis = GATES[gate]
    if turns == 0:
        return None
    amplitude = settings.pi_amplitude if abs(turns) == 1. else settings.pi_half_amplitude
    return drag_pulse(np.sign(turns) * amplitude, settings.drag, settings.sigma, settings.pulse_duration,
                      settings.sample_period, start=start, phase=axis + phase)


def gate_length(settings):
    return (settings.samples(settings.pulse_duration) + 1) * settings.sample_period


def readout_pulse(settings, start, acquire='shots', weights=None):
    settings.require('readout_frequency')
    n = settings.samples(settings.readout_duration)
    envelope = np.full(n, settings.readout_amplitude, dtype=complex)
    if acquire == 'shots' and weights is None:
        weights = settings.weights
    return Channel(READOUT, envelope, start=start, acquire=acquire, weights=weights if acquire == 'shots' else None)


def gate_sequence(settings, gates, waits=None, phases=None, acquire='shots', weights=None, n_readouts=1,
                  drive_frequency=None):
    """
    Gates played back to back, each followed by an optional wait, then one or more readouts.

    Args:
        settings (ControlSettings): Calibrated settings
        gates (list): Gate names from GATES, or Channel objects which are moved to their slot
        waits (list): Idle time after each gate in s, rounded to the sample grid
        phases (list): Extra rotation axis phase of each gate in rad
        acquire (str): Acquisition mode of the readouts, 'shots', 'trace' or None
        weights (np.ndarray): Integration weights overriding the settings
        n_readouts (int): Number of consecutive readouts
        drive_frequency (float): Drive frequency overriding the calibrated qubit frequency

    Returns:
        PulseSequence: The sequence
    """
    waits = [0.] * len(gates) if waits is None else list(waits)
    phases = [0.] * len(gates) if phases is None else list(phases)
    if not len(waits) == len(phases) == len(gates):
        raise InputError("Need one wait and one phase per gate")
    dt = settings.sample_period
    cursor = 0
    channels = []
    for gate, wait, phase in zip(gates, waits, phases):
        if isinstance(gate, Channel):
            pulse = replace(gate, start=cursor * dt, phase=gate.phase + phase)
            length = len(gate.envelope)
        else:
            pulse = gate_pulse(gate, settings, start=cursor * dt, phase=phase)
            length = settings.samples(gate_length(settings))
        if pulse is not None:
            channels.append(pulse)
        cursor += length + settings.samples(wait)
    for _ in range(n_readouts):
        readout = readout_pulse(settings, cursor * dt, acquire, weights)
        channels.append(readout)
        cursor += len(readout.envelope)
    frequency = settings.qubit_frequency if drive_frequency is None else drive_frequency
    return PulseSequence(dt, channels, drive_frequency=frequency, readout_frequency=settings.readout_frequency,
                         flux_bias=settings.flux_bias)


def measure_signals(device, sequences, rng, n_shots):
    """Mean integrated signal of the first acquisition of each sequence, and its standard error"""
    results = device.execute_many(sequences, n_shots, rng)
    batches = [result[0] for result in results]
    means = np.array([batch.mean() for batch in batches])
    errors = np.array([np.std(batch.outcomes) / np.sqrt(max(batch.n_shots, 1)) for batch in batches])
    return means, errors


def measure_populations(device, settings, sequences, rng, n_shots):
    means, _ = measure_signals(device, sequences, rng, n_shots)
    return settings.populations(means)


def principal_projection(signal):
    """
    Project complex signals onto their principal axis.

    The sign is fixed so that the first point projects below the median, which makes a Rabi sweep start low.

    Returns:
        (np.ndarray, complex, complex): The projections, the centre and the unit axis
    """
    signal = np.asarray(signal, dtype=complex)
    center = signal.mean()
    points = np.column_stack([np.real(signal - center), np.imag(signal - center)])
    _, _, vt = np.linalg.svd(points, full_matrices=False)
    axis = complex(vt[0, 0], vt[0, 1])
    projection = np.real((signal - center) * np.conj(axis))
    if projection[0] > np.median(projection):
        axis = -axis
        projection = -projection
    return projection, center, axis


# Models


def rabi_signal(a, offset, contrast, pi_amplitude):
    return offset - contrast * np.cos(np.pi * np.asarray(a) / pi_amplitude)


def exponential_decay(t, amplitude, decay_time, offset):
    return amplitude * np.exp(-np.asarray(t) / decay_time) + offset


def stretched_decay(t, amplitude, decay_time, stretch, offset):
    return amplitude * np.exp(-(np.asarray(t) / decay_time) ** stretch) + offset


def ramsey_fringe(t, amplitude, decay_time, stretch, frequency, phase, offset):
    t = np.asarray(t)
    return amplitude * np.exp(-(t / decay_time) ** stretch) * np.cos(2 * np.pi * frequency * t + phase) + offset


def ramsey_fringe_with_envelope_offset(t, amplitude, decay_time, stretch, frequency, phase, envelope_offset,
                                       offset):
    t = np.asarray(t)
    envelope = amplitude * np.exp(-(t / decay_time) ** stretch)
    return envelope * (np.cos(2 * np.pi * frequency * t + phase) + envelope_offset) + offset


def _decay_time_guess(t, y, offset):
    """Time at which |y - offset| first drops below 1/e of its initial value"""
    excursion = np.abs(np.asarray(y) - offset)
    below = np.nonzero(excursion < excursion[0] / np.e)[0]
    if len(below) and t[below[0]] > 0:
        return float(t[below[0]])
    return float(t[-1] - t[0]) if t[-1] > t[0] else 1.


def fit_rabi(amplitudes, signal):
    amplitudes = np.asarray(amplitudes, dtype=float)
    signal = np.asarray(signal, dtype=float)
    low, high = signal.min(), signal.max()
    first_high = int(np.nonzero(signal >= low + 0.9 * (high - low))[0][0])
    pi_guess = amplitudes[first_high] if amplitudes[first_high] > 0 else amplitudes[-1]
    p0 = [0.5 * (high + low), 0.5 * (high - low), pi_guess]
    bounds = ([-np.inf, 0., 0.], [np.inf, np.inf, np.inf])
    return least_squares_fit(rabi_signal, amplitudes, signal, p0, bounds=bounds,
                             names=('offset', 'contrast', 'pi_amplitude'))


def fit_T1(delays, populations):
    """Fit A exp(-t/T1) + B"""
    t = np.asarray(delays, dtype=float)
    p = np.asarray(populations, dtype=float)
    offset = float(np.mean(p[-max(len(p) // 8, 1):]))
    p0 = [p[0] - offset, _decay_time_guess(t, p, offset), offset]
    bounds = ([-np.inf, 0., -np.inf], [np.inf, np.inf, np.inf])
    return least_squares_fit(exponential_decay, t, p, p0, bounds=bounds, names=('amplitude', 't1', 'offset'))


def fit_echo(delays, populations, stretch=None):
    """Fit A exp(-(t/T2E)^n) + B, with n fixed when stretch is given"""
    t = np.asarray(delays, dtype=float)
    p = np.asarray(populations, dtype=float)
    offset = float(np.mean(p[-max(len(p) // 8, 1):]))
    decay_guess = _decay_time_guess(t, p, offset)
    if stretch is not None:
        def model(x, amplitude, decay_time, offset_):
            return stretched_decay(x, amplitude, decay_time, stretch, offset_)
        return least_squares_fit(model, t, p, [p[0] - offset, decay_guess, offset],
                                 bounds=([-np.inf, 0., -np.inf], [np.inf, np.inf, np.inf]),
                                 names=('amplitude', 't2_echo', 'offset'))
    return least_squares_fit(stretched_decay, t, p, [p[0] - offset, decay_guess, 1., offset],
                             bounds=([-np.inf, 0., 0.5, -np.inf], [np.inf, np.inf, 3., np.inf]),
                             names=('amplitude', 't2_echo', 'stretch', 'offset'))


def fringe_frequency_guess(t, y):
    """Dominant frequency of a uniformly sampled signal, from its zero padded spectrum"""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float) - np.mean(y)
    step = t[1] - t[0]
    n = 8 * len(y)
    spectrum = np.abs(np.fft.rfft(y * np.hanning(len(y)), n))
    frequencies = np.fft.rfftfreq(n, step)
    return float(frequencies[int(np.argmax(spectrum[1:])) + 1])


def fit_ramsey(delays, populations, stretch=None, fit_envelope_offset=False, t2_guess=None):
    """
    Fit a Ramsey fringe A exp(-(t/T2*)^n) cos(2 pi f t + phi) + B.

    Args:
        delays (array_like): Uniformly spaced delays, s
        populations (array_like): Excited state populations
        stretch (float): Fixed stretch exponent n; fitted in [0.5, 3] when None
        fit_envelope_offset (bool): Fit the variant A exp(...)(cos(...) + C) + B
        t2_guess (float): Starting guess of the decay time

    Returns:
        FitResult: Parameters amplitude, t2_star, [stretch,] frequency, phase, [envelope_offset,] offset
    """
    t = np.asarray(delays, dtype=float)
    p = np.asarray(populations, dtype=float)
    nyquist = 0.5 / (t[1] - t[0])
    frequency = fringe_frequency_guess(t, p)
    amplitude = 0.5 * (p.max() - p.min())
    offset = float(np.mean(p))
    phase = 0. if p[0] >= offset else np.pi - 1e-6
    decay = t2_guess if t2_guess is not None else 0.5 * (t[-1] - t[0])

    names = ['amplitude', 't2_star', 'stretch', 'frequency', 'phase', 'offset']
    p0 = [amplitude, decay, 1., frequency, phase, offset]
    lower = [0., 0., 0.5, 0., -np.pi, -np.inf]
    upper = [np.inf, np.inf, 3., nyquist, np.pi, np.inf]
    model = ramsey_fringe
    if fit_envelope_offset:
        names.insert(5, 'envelope_offset')
        p0.insert(5, 0.)
        lower.insert(5, -1.)
        upper.insert(5, 1.)
        model = ramsey_fringe_with_envelope_offset
    if stretch is not None:
        def fixed(x, *params):
            return model(x, params[0], params[1], stretch, *params[2:])
        names.pop(2)
        p0.pop(2)
        lower.pop(2)
        upper.pop(2)
        return least_squares_fit(fixed, t, p, p0, bounds=(lower, upper), names=tuple(names))
    return least_squares_fit(model, t, p, p0, bounds=(lower, upper), names=tuple(names))


def coherence_consistent(t1, t1_error, t2, t2_error, n_sigma=CONSISTENCY_SIGMAS):
    """Whether 1/T2 >= 1/(2 T1) holds within n_sigma combined standard deviations"""
    rate_gap = 1. / t2 - 0.5 / t1
    rate_error = np.hypot(t2_error / t2 ** 2, 0.5 * t1_error / t1 ** 2)
    return bool(rate_gap >= -n_sigma * rate_error)


# Experiments


def rabi_calibration(device, settings, rng, amplitudes=None, n_shots=DEFAULT_SHOTS):
    """
    Fixed duration amplitude Rabi.

    The drive amplitude of a DRAG-free Gaussian is swept, the averaged signals projected on their principal axis and
    a cosine in amplitude fitted; the pi amplitude is its first half period and the pi/2 amplitude its quarter. The
    ground and excited calibration points are then measured with extra shots at zero and pi amplitude.

    Args:
        device: Anything with the execute interface
        settings (ControlSettings): Needs the qubit frequency and a readout
        rng (RngStream): Source of randomness
        amplitudes (array_like): Amplitudes to sweep
        n_shots (int): Shots per amplitude

    Returns:
        RabiResult: The amplitudes, fit and calibration points

    Raises:
        CalibrationError: If the contrast is below CONTRAST_NOISE_FACTOR times the noise of a point
    """
    settings.require('qubit_frequency', 'readout_frequency', 'readout_power_dbm')
    amplitudes = np.linspace(0., 1., 41) if amplitudes is None else np.asarray(amplitudes, dtype=float)

    def pulse(amplitude):
        return drag_pulse(amplitude, 0., settings.sigma, settings.pulse_duration, settings.sample_period)

    sequences = [gate_sequence(settings, [pulse(a)]) for a in amplitudes]
    signal, errors = measure_signals(device, sequences, rng.child(0), n_shots)
    projection, _, _ = principal_projection(signal)
    noise = float(np.median(errors))

    fit = fit_rabi(amplitudes, projection)
    logger.debug("Rabi fit %s", fit.as_dict()['params'])
    if not fit['contrast'] > CONTRAST_NOISE_FACTOR * noise:
        raise CalibrationError("Rabi contrast " + str(fit['contrast']) + " is below the noise floor " + str(noise))
    pi_amplitude = float(fit['pi_amplitude'])

    # Calibration points with extra shots
    points = [gate_sequence(settings, []), gate_sequence(settings, [pulse(pi_amplitude)])]
    means, _ = measure_signals(device, points, rng.child(1), CALIBRATION_POINT_FACTOR * n_shots)
    return RabiResult(pi_amplitude, 0.5 * pi_amplitude, fit, amplitudes, projection, complex(means[0]),
                      complex(means[1]))


def measure_T1(device, settings, delays, rng, n_shots=DEFAULT_SHOTS):
    """
    Energy relaxation: a pi pulse, a wait, a readout.

    Returns:
        CoherenceFit: Fit of A exp(-t/T1) + B, flagged 'decay longer than grid' when T1 exceeds the longest delay
    """
    settings.require('pi_amplitude', 'ground_point', 'excited_point')
    delays = settings.on_grid(delays)
    sequences = [gate_sequence(settings, ['X'], waits=[tau]) for tau in delays]
    populations = measure_populations(device, settings, sequences, rng, n_shots)
    fit = fit_T1(delays, populations)
    flags = ()
    if fit['t1'] > delays[-1]:
        flags = ('decay longer than grid',)
        logger.warning("T1 of %.3g s is longer than the delay grid", fit['t1'])
    return CoherenceFit(fit, delays, populations, flags)


def measure_ramsey(device, settings, delays, rng, artificial_detuning=0., n_shots=DEFAULT_SHOTS, stretch=None,
                   drive_frequency=None, fit_envelope_offset=False):
    """
    Ramsey: two pi/2 pulses separated by a wait, the second advanced in phase by 2 pi f_art tau.

    The fringe frequency is the qubit detuning from the drive plus the artificial detuning. With fit_envelope_offset
    the fit adds an offset C inside the envelope, A exp(-(t/T2*)^n)(cos(2 pi f t + phi) + C) + B.

    Returns:
        CoherenceFit: The fringe fit; flagged when the decay outlasts the grid
    """
    settings.require('pi_half_amplitude', 'ground_point', 'excited_point')
    delays = settings.on_grid(delays)
    sequences = [gate_sequence(settings, ['x', 'x'], waits=[tau, 0.],
                               phases=[0., 2 * np.pi * artificial_detuning * tau], drive_frequency=drive_frequency)
                 for tau in delays]
    populations = measure_populations(device, settings, sequences, rng, n_shots)
    fit = fit_ramsey(delays, populations, stretch=stretch, fit_envelope_offset=fit_envelope_offset,
                     t2_guess=settings.t2_star or settings.t2_guess)
    flags = ('decay longer than grid',) if fit['t2_star'] > delays[-1] else ()
    return CoherenceFit(fit, delays, populations, flags)


def measure_echo(device, settings, delays, rng, n_shots=DEFAULT_SHOTS, stretch=None):
    """
    Hahn echo: pi/2, tau/2, pi, tau/2, pi/2. Static detuning is refocused and the population decays from zero to a
    half.

    Returns:
        CoherenceFit: Fit of the stretched exponential
    """
    settings.require('pi_amplitude', 'ground_point', 'excited_point')
    halves = settings.on_grid(0.5 * np.asarray(delays, dtype=float))
    delays = 2 * halves
    sequences = [gate_sequence(settings, ['x', 'X', 'x'], waits=[half, half, 0.]) for half in halves]
    populations = measure_populations(device, settings, sequences, rng, n_shots)
    fit = fit_echo(delays, populations, stretch=stretch)
    flags = ('decay longer than grid',) if fit['t2_echo'] > delays[-1] else ()
    return CoherenceFit(fit, delays, populations, flags)


def repeated_ramsey_frequency_cal(device, settings, rng, initial_span=2e6, n_rounds=RAMSEY_ROUNDS,
                                  n_points=RAMSEY_POINTS, n_shots=DEFAULT_SHOTS, between_rounds=None):
    """
    Refine the qubit frequency with Ramsey experiments of growing length.

    Round r samples n_points delays spaced by dt_r = dt_0 2^r with an artificial detuning of 0.2/dt_r, so a residual
    detuning up to that size keeps the fringe between 0 and NYQUIST_MARGIN cycles per sample. The first spacing is
    chosen so that the initial span of uncertainty is covered. The span stops growing once it reaches twice the
    fitted T2*. The loop ends after n_rounds or when the frequency uncertainty drops below 1/(2 pi T2* sqrt(N)) for
    N shots in the round.

    Args:
        device: Anything with the execute interface
        settings (ControlSettings): Needs pi/2 and calibration points; qubit_frequency is the starting estimate
        rng (RngStream): Source of randomness
        initial_span (float): Largest expected error of the starting estimate, Hz
        n_rounds (int): Maximum number of rounds
        n_points (int): Delays per round
        n_shots (int): Shots per delay
        between_rounds (callable): Called with the round index after each round, to inject drift in tests

    Returns:
        RamseyCalibration: Final frequency, its uncertainty, the last T2* and the per-round record

    Raises:
        CalibrationError: If a round finds a residual detuning the previous rounds should have removed, which means
            the fringe was aliased
    """
    settings.require('qubit_frequency')
    if not initial_span > 0:
        raise InputError("initial_span must be positive")
    frequency = float(settings.qubit_frequency)
    spacing = settings.sample_period * max(1, settings.samples(0.5 * NYQUIST_MARGIN / initial_span))
    t2_star = settings.t2_star or settings.t2_guess
    rounds = []
    uncertainty = np.inf
    for r in range(n_rounds):
        artificial = 0.5 * NYQUIST_MARGIN / spacing
        delays = np.arange(n_points) * spacing
        result = measure_ramsey(device, settings.updated(t2_star=t2_star), delays, rng.child(r), artificial, n_shots,
                                stretch=1., drive_frequency=frequency)
        fit = result.fit
        detuning = float(fit['frequency'] - artificial)
        stderr = float(fit.error('frequency'))
        if r > 0 and abs(detuning) > ALIAS_FRACTION * artificial:
            raise CalibrationError("Round " + str(r) + " found a residual detuning of " + str(detuning)
                                   + " Hz; an earlier round was aliased")
        rounds.append(RamseyRound(delays[-1], artificial, detuning, stderr, frequency))
        frequency += detuning
        uncertainty = stderr
        if fit.converged and fit['t2_star'] > 0:
            t2_star = float(fit['t2_star'])
        logger.debug("Ramsey round %d: span %.3g s, detuning %.4g Hz +- %.2g", r, delays[-1], detuning, stderr)
        if between_rounds is not None:
            between_rounds(r)
        if uncertainty < 1. / (2 * np.pi * t2_star * np.sqrt(n_shots * n_points)):
            break
        # Double the span until it reaches twice T2*
        if 2 * delays[-1] <= 2 * t2_star:
            spacing *= 2
    if not np.isfinite(uncertainty):
        raise FitError("Repeated Ramsey produced no frequency estimate")
    return RamseyCalibration(frequency, uncertainty, t2_star, tuple(rounds))
