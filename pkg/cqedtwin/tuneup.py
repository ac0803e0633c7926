"""
The single qubit tuneup: the gate and mixer calibrations that complete the spectroscopy and time-domain
experiments, one node function per calibration step, and the default calibration graph built from them.

Calibrations defined here:
    * ALLXY, with an error syndrome classifier. The 21 gate pairs are read from data/allxy.json. The deviation of
      the measured trace from the ideal staircase is decomposed by least squares onto signature templates, which
      are simulated once per call on a noiseless reference model of the calibrated qubit with a detuning, an
      amplitude error or a DRAG error injected
    * DRAG, from the zero crossing of P(x then Y) - P(y then X) against the DRAG coefficient
    * Pulse-train amplitude refinement: a pi/2 pulse followed by 2N pi pulses, whose excited population
      0.5 (1 + sin(pi/2 e_half + 2 pi N e)) reveals the relative over-rotations e of both pulses
    * IQ mixer nulling by coordinate descent, offsets first, then amplitude scale and skew
    * Readout optimisation: optimal weights from averaged traces, then a threshold and calibration points

Node functions take (device, settings, rng, **params) and return a NodeResult. EXPERIMENTS maps the names used in
graph files to them.
"""
import json
import logging
import os
from collections import namedtuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar

from cqedtwin import gates, readout, spectroscopy, timedomain
from cqedtwin.calibration import CalibGraph, NodeResult
from cqedtwin.device import GroundTruth
from cqedtwin.errors import CalibrationError, FitError
from cqedtwin.numerics import least_squares_fit
from cqedtwin.simulator import SweepSpec, VirtualDevice
from cqedtwin.timedomain import DEFAULT_SHOTS, drag_pulse, gate_length, gate_sequence, measure_signals

logger = logging.getLogger(__name__)

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data')

# Errors injected into the reference model to build the ALLXY templates
ALLXY_DETUNING = 200e3
ALLXY_AMPLITUDE = 0.02
ALLXY_DRAG = 0.1
# A trace closer to the staircase than this many noise norms is clean
ALLXY_NOISE_FACTOR = 3.
# The last four points minus the first five must exceed this for the readout to be trusted
ALLXY_MIN_CONTRAST = 0.5
SYNDROMES = ('detuning', 'amplitude', 'drag')

PULSE_TRAIN_N = (0, 1, 2, 4, 8, 16)
PULSE_TRAIN_ITERATIONS = 2
# The longest train may last at most this fraction of the shortest coherence time
PULSE_TRAIN_COHERENCE_FRACTION = 0.1

MIXER_OFFSET_RANGE = 0.5
MIXER_CORRECTION_RANGE = 0.3
MIXER_XATOL = 1e-10
MIXER_MIN_SUPPRESSION_DB = 60.

AllxyResult = namedtuple('AllxyResult', ['trace', 'ideal', 'errors', 'syndrome', 'severity', 'coefficients',
                                         'residual'])
DragResult = namedtuple('DragResult', ['drag', 'error', 'drag_values', 'difference'])
PulseTrainResult = namedtuple('PulseTrainResult', ['pi_amplitude', 'pi_half_amplitude', 'epsilon', 'epsilon_half',
                                                   'error', 'iterations', 'n_list', 'populations'])
MixerCalibration = namedtuple('MixerCalibration', ['i_offset', 'q_offset', 'scale', 'skew', 'suppression_db',
                                                   'iterations', 'spectrum'])
ReadoutOptimization = namedtuple('ReadoutOptimization', ['weights', 'threshold', 'assignment', 'snr',
                                                         'ground_point', 'excited_point', 't', 'traces'])


def load_table(name):
    with open(os.path.join(DATA_DIR, name)) as handle:
        return json.load(handle)


# ALLXY


def reference_device(settings):
    """
    A noiseless model of the qubit as the settings describe it: no decoherence, no readout resonator, and a drive
    rate such that the calibrated pi amplitude is exactly a pi rotation of a DRAG-free pulse.
    """
    settings.require('qubit_frequency', 'anharmonicity', 'pi_amplitude')
    shape = drag_pulse(1., 0., settings.sigma, settings.pulse_duration, settings.sample_period).envelope.real
    drive_rate = np.pi / (settings.pi_amplitude * shape.sum() * settings.sample_period)
    gt = GroundTruth(qubit_frequency=settings.qubit_frequency, anharmonicity=settings.anharmonicity, t1=1.,
                     t_phi=1., resonator_frequency=settings.qubit_frequency + 2e9, g=0., kappa_c=2 * np.pi * 1e6,
                     kappa_i=0., drive_rate=drive_rate)
    return VirtualDevice(gt)


def allxy_sequences(settings, pairs, n_readouts=1, drive_frequency=None, phase=0.):
    return [gate_sequence(settings, list(pair), phases=[phase, phase], n_readouts=n_readouts,
                          drive_frequency=drive_frequency) for pair in pairs]


def allxy_ideal_populations(device, settings, pairs, drive_frequency=None, phase=0.):
    """Excited populations at the end of each pair, computed without sampling"""
    populations = []
    for seq in allxy_sequences(settings, pairs, 0, drive_frequency, phase):
        rho = device.final_state(seq)
        populations.append(1. - float(np.real(rho[0, 0])))
    return np.array(populations)


def allxy_templates(settings, pairs=None, detuning=ALLXY_DETUNING, amplitude=ALLXY_AMPLITUDE, drag=ALLXY_DRAG):
    """
    Change of the ALLXY trace caused by each pure error, simulated on the reference model.

    Returns:
        dict: Syndrome name to a 21-point deviation from the reference trace
    """
    pairs = load_table('allxy.json')['pairs'] if pairs is None else pairs
    device = reference_device(settings)
    base = allxy_ideal_populations(device, settings, pairs)
    scaled = settings.updated(pi_amplitude=settings.pi_amplitude * (1. + amplitude),
                              pi_half_amplitude=settings.pi_half_amplitude * (1. + amplitude))
    return {
        'detuning': allxy_ideal_populations(device, settings, pairs, settings.qubit_frequency - detuning) - base,
        'amplitude': allxy_ideal_populations(device, scaled, pairs) - base,
        'drag': allxy_ideal_populations(device, settings.updated(drag=settings.drag + drag), pairs) - base,
    }


def classify_allxy(deviation, templates, noise_norm):
    """
    Decompose a deviation from the staircase onto the syndrome templates.

    Returns:
        (str, float, dict, float): The syndrome ('none', 'distortion' or a template name), its coefficient in
            multiples of the template's injected error, all coefficients and the residual norm
    """
    deviation = np.asarray(deviation, dtype=float)
    names = [name for name in SYNDROMES if name in templates]
    matrix = np.column_stack([templates[name] for name in names])
    coefficients, _, _, _ = np.linalg.lstsq(matrix, deviation, rcond=None)
    explained = matrix @ coefficients
    residual = float(np.linalg.norm(deviation - explained))
    coefficients = {name: float(c) for name, c in zip(names, coefficients)}
    if np.linalg.norm(deviation) < ALLXY_NOISE_FACTOR * noise_norm:
        return 'none', 0., coefficients, residual
    if residual > np.linalg.norm(explained):
        return 'distortion', residual, coefficients, residual
    contributions = {name: abs(coefficients[name]) * np.linalg.norm(templates[name]) for name in names}
    syndrome = max(names, key=lambda name: contributions[name])
    return syndrome, coefficients[syndrome], coefficients, residual


def allxy(device, settings, rng, n_repeats=2, n_shots=DEFAULT_SHOTS, templates=None, reference=None):
    """
    Run ALLXY and classify the deviation from the ideal staircase.

    Args:
        device: Anything with the execute interface
        settings (ControlSettings): Calibrated gates and calibration points
        rng (RngStream): Source of randomness
        n_repeats (int): Consecutive repetitions of every pair
        n_shots (int): Shots per sequence
        templates (dict): Syndrome templates; simulated with allxy_templates when None
        reference (AllxyResult): A trace of gates known to be good; when given the deviation is taken from its trace
            instead of the staircase and its errors add to the noise

    Returns:
        AllxyResult: The 21-point trace, its standard errors, the syndrome and its severity

    Raises:
        CalibrationError: If the trace has lost its contrast, which points at a broken readout
    """
    settings.require('pi_amplitude', 'pi_half_amplitude', 'ground_point', 'excited_point')
    table = load_table('allxy.json')
    pairs = table['pairs']
    ideal = np.array(table['ideal'])
    sequences = [seq for seq in allxy_sequences(settings, pairs) for _ in range(n_repeats)]
    means, errors = measure_signals(device, sequences, rng, n_shots)
    separation = abs(settings.excited_point - settings.ground_point)
    populations = settings.populations(means).reshape(len(pairs), n_repeats)
    trace = populations.mean(axis=1)
    trace_errors = np.sqrt(np.sum((errors / separation).reshape(len(pairs), n_repeats) ** 2, axis=1)) / n_repeats

    contrast = trace[-4:].mean() - trace[:5].mean()
    if contrast < ALLXY_MIN_CONTRAST:
        raise CalibrationError("ALLXY contrast collapsed to " + str(contrast))

    templates = allxy_templates(settings, pairs) if templates is None else templates
    if reference is None:
        deviation, noise = trace - ideal, trace_errors
    else:
        deviation, noise = trace - reference.trace, np.hypot(trace_errors, reference.errors)
    syndrome, severity, coefficients, residual = classify_allxy(deviation, templates, float(np.linalg.norm(noise)))
    logger.info("ALLXY syndrome %s (severity %.3g)", syndrome, severity)
    return AllxyResult(trace, ideal, trace_errors, syndrome, severity, coefficients, residual)


# DRAG


def drag_calibration(device, settings, rng, drag_values=None, n_shots=DEFAULT_SHOTS):
    """
    DRAG coefficient that equalises x-then-Y and y-then-X.

    A DRAG error turns into a phase error between the two quadratures, which pushes the two sequences apart in
    opposite directions. The population difference is fitted with a straight line through the points around the
    sign change closest to the current coefficient.

    Returns:
        DragResult: The zero crossing, its uncertainty and the measured differences

    Raises:
        FitError: If the difference does not change sign in the sweep
    """
    settings.require('pi_amplitude', 'pi_half_amplitude', 'ground_point', 'excited_point')
    drag_values = np.linspace(-1., 1., 21) if drag_values is None else np.asarray(drag_values, dtype=float)
    sequences = []
    for value in drag_values:
        swept = settings.updated(drag=float(value))
        sequences.append(gate_sequence(swept, ['x', 'Y']))
        sequences.append(gate_sequence(swept, ['y', 'X']))
    populations = timedomain.measure_populations(device, settings, sequences, rng, n_shots)
    difference = populations[0::2] - populations[1::2]

    changes = np.nonzero(np.diff(np.sign(difference)) != 0)[0]
    if len(changes) == 0:
        raise FitError("DRAG difference does not change sign over the sweep")
    crossing = min(changes, key=lambda k: abs(0.5 * (drag_values[k] + drag_values[k + 1]) - settings.drag))
    window = slice(max(crossing - 2, 0), min(crossing + 4, len(drag_values)))
    x, y = drag_values[window], difference[window]
    zero_guess = 0.5 * (drag_values[crossing] + drag_values[crossing + 1])
    fit = least_squares_fit(lambda d, slope, zero: slope * (d - zero), x, y,
                            [(y[-1] - y[0]) / (x[-1] - x[0]), zero_guess], names=('slope', 'zero'))
    drag = float(fit['zero'])
    logger.info("DRAG coefficient %.4f", drag)
    return DragResult(drag, float(fit.error('zero')), drag_values, difference)


# Pulse train


def pulse_train_population(n, epsilon, epsilon_half, decay=0.):
    """Excited population after a pi/2 pulse and 2N pi pulses with relative over-rotations e_half and e"""
    n = np.asarray(n, dtype=float)
    rotation = 0.5 * np.pi * epsilon_half + 2 * np.pi * n * epsilon
    return 0.5 * (1. + np.sin(rotation)) * np.exp(-decay * n)


def pulse_train_amplitude_cal(device, settings, rng, n_list=PULSE_TRAIN_N, n_shots=2000,
                              iterations=PULSE_TRAIN_ITERATIONS):
    """
    Refine the pi and pi/2 amplitudes by amplifying their errors.

    Args:
        device: Anything with the execute interface
        settings (ControlSettings): Coarse amplitudes and calibration points
        rng (RngStream): Source of randomness
        n_list (sequence): Numbers N of pi pulse pairs
        n_shots (int): Shots per sequence
        iterations (int): Measure and correct this many times

    Returns:
        PulseTrainResult: Refined amplitudes and the over-rotations found in each iteration

    Raises:
        CalibrationError: If the longest train outlasts PULSE_TRAIN_COHERENCE_FRACTION of T1 or T2*
    """
    settings.require('pi_amplitude', 'pi_half_amplitude', 'ground_point', 'excited_point')
    n_list = np.asarray(sorted(n_list), dtype=int)
    coherence = min(settings.t1 or settings.t1_guess, settings.t2_star or settings.t2_guess)
    pulse = gate_length(settings)
    if 2 * n_list[-1] * pulse > PULSE_TRAIN_COHERENCE_FRACTION * coherence:
        raise CalibrationError("Decoherence dominates before N = " + str(n_list[-1]) + "; reduce N")
    # Relaxation during the train, per pair of pi pulses
    decay = 2 * pulse / (settings.t1 or settings.t1_guess)

    history = []
    populations = None
    fit = None
    for iteration in range(iterations):
        sequences = [gate_sequence(settings, ['x'] + ['X'] * (2 * n)) for n in n_list]
        populations = timedomain.measure_populations(device, settings, sequences, rng.child(iteration), n_shots)
        fit = least_squares_fit(lambda n, e, e_half: pulse_train_population(n, e, e_half, decay), n_list,
                                populations, [0., 0.], bounds=([-0.05, -0.2], [0.05, 0.2]),
                                names=('epsilon', 'epsilon_half'))
        epsilon, epsilon_half = float(fit['epsilon']), float(fit['epsilon_half'])
        history.append((epsilon, epsilon_half))
        settings = settings.updated(pi_amplitude=settings.pi_amplitude / (1. + epsilon),
                                    pi_half_amplitude=settings.pi_half_amplitude / (1. + epsilon_half))
        logger.debug("Pulse train iteration %d: epsilon %.2e, epsilon_half %.2e", iteration, epsilon, epsilon_half)
    return PulseTrainResult(settings.pi_amplitude, settings.pi_half_amplitude, history[-1][0], history[-1][1],
                            float(fit.error('epsilon')), tuple(history), n_list, populations)


# Mixer


def _mixer_spectrum(device, rng, corrections, f_lo, f_if):
    spec = SweepSpec('mixer_spectrum', {}, dict(corrections, f_lo=f_lo, f_if=f_if), 1)
    return device.execute(spec, rng=rng).data


def mixer_calibration(device, rng, f_lo=6e9, f_if=100e6, max_iterations=10, tolerance=1e-9):
    """
    Null the LO leakage and the unwanted sideband of the drive mixer.

    Each pass minimises the carrier power over the I and then the Q offset, and the unwanted sideband over the
    amplitude scale and then the skew, each a bounded one dimensional search. Passes repeat until no setting moves by
    more than the tolerance.

    Returns:
        MixerCalibration: The corrections, the suppression of the worst spur below the wanted sideband in dB, the
            number of passes and the final spectrum

    Raises:
        CalibrationError: If the corrections are still moving after max_iterations passes
    """
    corrections = {'i_offset': 0., 'q_offset': 0., 'scale': 0., 'skew': 0.}
    wanted, unwanted = (1, 2) if f_if >= 0 else (2, 1)
    targets = (('i_offset', 0, MIXER_OFFSET_RANGE), ('q_offset', 0, MIXER_OFFSET_RANGE),
               ('scale', unwanted, MIXER_CORRECTION_RANGE), ('skew', unwanted, MIXER_CORRECTION_RANGE))
    for iteration in range(1, max_iterations + 1):
        largest_step = 0.
        for name, component, bound in targets:
            def objective(value):
                trial = dict(corrections)
                trial[name] = value
                return _mixer_spectrum(device, rng, trial, f_lo, f_if)[component]
            result = minimize_scalar(objective, bounds=(-bound, bound), method='bounded',
                                     options={'xatol': MIXER_XATOL})
            largest_step = max(largest_step, abs(result.x - corrections[name]))
            corrections[name] = float(result.x)
        if largest_step < tolerance:
            break
    else:
        raise CalibrationError("Mixer calibration did not converge in " + str(max_iterations) + " passes")
    spectrum = _mixer_spectrum(device, rng, corrections, f_lo, f_if)
    suppression = 10. * np.log10(spectrum[wanted] / max(spectrum[0], spectrum[unwanted]))
    logger.info("Mixer spurs suppressed by %.1f dB after %d passes", suppression, iteration)
    return MixerCalibration(corrections['i_offset'], corrections['q_offset'], corrections['scale'],
                            corrections['skew'], float(suppression), iteration, spectrum)


# Readout


def readout_optimization(device, settings, rng, n_traces=2000, n_shots=5000, method='midpoint'):
    """
    Optimal integration weights, a threshold and fresh calibration points.

    Returns:
        ReadoutOptimization: The weights, the threshold, the assignment matrix, the SNR and the mean signal of
            each state integrated with the new weights
    """
    settings.require('pi_amplitude', 'readout_frequency', 'readout_power_dbm')
    traces = [device.execute(gate_sequence(settings, pulses, acquire='trace'), n_traces, rng.child(k))[0]
              for k, pulses in enumerate(([], ['X']))]
    t = traces[0].t
    weights = readout.optimal_weights(traces[0].signal, traces[1].signal, t)
    batches = [device.execute(gate_sequence(settings, pulses, weights=weights), n_shots, rng.child(2 + k))[0]
               for k, pulses in enumerate(([], ['X']))]
    digitized = readout.threshold_digitize(batches[0], batches[1], method)
    assignment = readout.assignment_matrix(batches[0], batches[1], digitized.threshold)
    snr = abs(batches[0].mean() - batches[1].mean()) / readout.pooled_sigma(batches[0], batches[1])
    logger.info("Readout: SNR %.2f, raw fidelity %.4f", snr, assignment.fidelity)
    return ReadoutOptimization(weights, digitized.threshold, assignment, float(snr), batches[0].mean(),
                               batches[1].mean(), t, traces)


# Node functions


def _frame(**columns):
    return pd.DataFrame({name: np.asarray(values) for name, values in columns.items()})


def _iq(signal):
    signal = np.asarray(signal, dtype=complex)
    return {'I': signal.real, 'Q': signal.imag}


def mixer_calibration_node(device, settings, rng, f_lo=6e9, f_if=100e6, max_iterations=10):
    result = mixer_calibration(device, rng, f_lo, f_if, max_iterations)
    estimates = {'mixer_' + name: (getattr(result, name), 0.) for name in ('i_offset', 'q_offset', 'scale', 'skew')}
    estimates['mixer_suppression_db'] = (result.suppression_db, 0.)
    spectrum = _frame(component=['lo', 'usb', 'lsb'], power=result.spectrum)
    flags = ()
    if result.suppression_db < MIXER_MIN_SUPPRESSION_DB:
        flags = ('spurs above -' + str(MIXER_MIN_SUPPRESSION_DB) + ' dB',)
    return NodeResult(estimates, datasets={'spectrum': spectrum}, flags=flags)


def resonator_spectroscopy_node(device, settings, rng, span=20e6, n_points=801, n_averages=1000):
    fit, f, s21 = spectroscopy.resonator_spectroscopy(device, settings, rng, span, n_points, n_averages=n_averages)
    estimates = {'resonator_frequency': (fit.frequency, fit.fit.error('f_r')),
                 'kappa': (fit.kappa, fit.fit.error('kappa')),
                 'kappa_c': (fit.kappa_c, fit.fit.error('kappa_c')),
                 'kappa_i': (fit.kappa_i, np.hypot(fit.fit.error('kappa'), fit.fit.error('kappa_c'))),
                 'q_c': (fit.q_c, 0.), 'q_i': (fit.q_i, 0.)}
    updates = {'resonator_frequency': fit.frequency, 'readout_frequency': fit.frequency}
    data = _frame(frequency=f, shots=np.full(len(f), n_averages), **_iq(s21))
    return NodeResult(estimates, updates, {'s21': data}, {'resonator': fit.fit})


def resonator_power_scan_node(device, settings, rng, powers=None, span=40e6, n_points=801, n_averages=1000):
    scan = spectroscopy.resonator_power_scan(device, settings, rng, powers, span, n_points, n_averages)
    estimates = {'bare_resonator_frequency': (scan.bare_frequency, scan.fits[-1].fit.error('f_r')),
                 'lamb_shift': (scan.lamb_shift, np.hypot(scan.fits[-1].fit.error('f_r'),
                                                          scan.fits[0].fit.error('f_r'))),
                 'readout_power_dbm': (scan.suggested_power_dbm, 0.)}
    flags = ()
    if scan.secondary_offset is not None:
        estimates['secondary_dip_offset'] = (scan.secondary_offset, 0.)
        flags = ('residual excited population',)
    data = _frame(power_dbm=scan.powers, frequency=[np.nan if fit is None else fit.frequency for fit in scan.fits],
                  kappa=[np.nan if fit is None else fit.kappa for fit in scan.fits])
    return NodeResult(estimates, {'readout_power_dbm': scan.suggested_power_dbm}, {'power_scan': data}, flags=flags)


def resonator_flux_sweep_node(device, settings, rng, currents=None, span=30e6, n_points=601, n_averages=1000):
    if not settings.tunable:
        return NodeResult(flags=('fixed frequency qubit',))
    sweep = spectroscopy.resonator_flux_sweep(device, settings, rng.child(0), currents, span, n_points, n_averages)
    at_sweet_spot = settings.updated(flux_bias=sweep.sweet_spot_current)
    fit, _, _ = spectroscopy.resonator_spectroscopy(device, at_sweet_spot, rng.child(1), n_averages=n_averages)
    estimates = {'sweet_spot_current': (sweep.sweet_spot_current, abs(sweep.currents[1] - sweep.currents[0]) / 2.),
                 'resonator_frequency': (fit.frequency, fit.fit.error('f_r'))}
    if sweep.period is not None:
        estimates['flux_period'] = (sweep.period, abs(sweep.currents[1] - sweep.currents[0]))
    updates = {'flux_bias': sweep.sweet_spot_current, 'resonator_frequency': fit.frequency,
               'readout_frequency': fit.frequency}
    data = _frame(current=sweep.currents, resonator_frequency=sweep.frequencies)
    return NodeResult(estimates, updates, {'flux_sweep': data})


def qubit_spectroscopy_node(device, settings, rng, span=200e6, n_points=401, n_averages=1000):
    line = spectroscopy.two_tone_spectroscopy(device, settings, rng, span, n_points=n_points, n_averages=n_averages)
    estimates = {'qubit_frequency': (line.frequency, float(line.fit.error('center'))),
                 'qubit_linewidth': (line.half_width, float(line.fit.error('half_width')))}
    flags = ('power broadened',) if line.broadened else ()
    return NodeResult(estimates, {'qubit_frequency': line.frequency}, fits={'line': line.fit}, flags=flags)


def anharmonicity_node(device, settings, rng, step=1e6, n_averages=1000):
    result = spectroscopy.three_tone_anharmonicity(device, settings, rng, step=step, n_averages=n_averages)
    sums, profile = result.profile
    return NodeResult({'anharmonicity': (result.anharmonicity, result.error)},
                      {'anharmonicity': result.anharmonicity}, {'ridge': _frame(frequency_sum=sums, excess=profile)})


def rabi_node(device, settings, rng, n_points=41, max_amplitude=1., n_shots=DEFAULT_SHOTS):
    amplitudes = np.linspace(0., max_amplitude, n_points)
    result = timedomain.rabi_calibration(device, settings, rng, amplitudes, n_shots)
    error = float(result.fit.error('pi_amplitude'))
    estimates = {'pi_amplitude': (result.pi_amplitude, error), 'pi_half_amplitude': (result.pi_half_amplitude,
                                                                                     0.5 * error)}
    updates = {'pi_amplitude': result.pi_amplitude, 'pi_half_amplitude': result.pi_half_amplitude,
               'ground_point': result.ground_point, 'excited_point': result.excited_point}
    data = _frame(amplitude=result.amplitudes, projection=result.signal, shots=np.full(n_points, n_shots))
    return NodeResult(estimates, updates, {'rabi': data}, {'rabi': result.fit})


def dispersive_shift_node(device, settings, rng, span=20e6, n_points=801, n_averages=1000):
    result = spectroscopy.dispersive_shift(device, settings, rng, span, n_points, n_averages)
    updates = {'chi': result.chi, 'readout_frequency': settings.resonator_frequency + 0.5 * result.chi}
    estimates = {'chi': (result.chi, result.error), 'prepared_excited_fraction': (result.p_excited, 0.)}
    return NodeResult(estimates, updates, fits={'mixture': result.fit})


def readout_optimization_node(device, settings, rng, n_traces=2000, n_shots=5000, method='midpoint'):
    result = readout_optimization(device, settings, rng, n_traces, n_shots, method)
    estimates = {'readout_fidelity_raw': (result.assignment.fidelity, 0.), 'readout_snr': (result.snr, 0.),
                 'readout_threshold': (result.threshold.value, result.threshold.sigma)}
    updates = {'weights': result.weights, 'threshold': result.threshold, 'ground_point': result.ground_point,
               'excited_point': result.excited_point}
    data = _frame(t=result.t, weight_I=result.weights.real, weight_Q=result.weights.imag,
                  ground_I=result.traces[0].signal.real, ground_Q=result.traces[0].signal.imag,
                  excited_I=result.traces[1].signal.real, excited_Q=result.traces[1].signal.imag)
    return NodeResult(estimates, updates, {'traces': data})


def ramsey_frequency_node(device, settings, rng, initial_span=2e6, n_rounds=timedomain.RAMSEY_ROUNDS,
                          n_points=timedomain.RAMSEY_POINTS, n_shots=DEFAULT_SHOTS):
    result = timedomain.repeated_ramsey_frequency_cal(device, settings, rng, initial_span, n_rounds, n_points,
                                                      n_shots)
    data = _frame(**{field: [getattr(r, field) for r in result.rounds] for field in timedomain.RamseyRound._fields})
    return NodeResult({'qubit_frequency': (result.qubit_frequency, result.uncertainty)},
                      {'qubit_frequency': result.qubit_frequency, 't2_star': result.t2_star}, {'rounds': data})


def _coherence_frame(result, n_shots):
    return _frame(delay=result.delays, population=result.populations, shots=np.full(len(result.delays), n_shots))


def t1_node(device, settings, rng, n_points=41, span_factor=4., n_shots=2000):
    span = span_factor * (settings.t1 or settings.t1_guess)
    result = timedomain.measure_T1(device, settings, np.linspace(0., span, n_points), rng.child(0), n_shots)
    if result.flags:
        # Widen the grid once
        span = span_factor * float(result.fit['t1'])
        result = timedomain.measure_T1(device, settings, np.linspace(0., span, n_points), rng.child(1), n_shots)
    estimates = {'t1': (float(result.fit['t1']), float(result.fit.error('t1')))}
    return NodeResult(estimates, {'t1': estimates['t1'][0], 't1_error': estimates['t1'][1]},
                      {'t1': _coherence_frame(result, n_shots)}, {'t1': result.fit}, result.flags)


def ramsey_node(device, settings, rng, n_points=101, span_factor=3., oscillations=5., n_shots=DEFAULT_SHOTS,
                fit_envelope_offset=False):
    t2 = settings.t2_star or settings.t2_guess
    delays = np.linspace(0., span_factor * t2, n_points)
    result = timedomain.measure_ramsey(device, settings, delays, rng, oscillations / delays[-1], n_shots,
                                       fit_envelope_offset=fit_envelope_offset)
    fit = result.fit
    estimates = {'t2_star': (float(fit['t2_star']), float(fit.error('t2_star'))),
                 'ramsey_stretch': (float(fit['stretch']), float(fit.error('stretch')))}
    if fit_envelope_offset:
        estimates['ramsey_envelope_offset'] = (float(fit['envelope_offset']), float(fit.error('envelope_offset')))
    flags = result.flags
    if settings.t1 is not None and not timedomain.coherence_consistent(settings.t1, settings.t1_error or 0.,
                                                                       fit['t2_star'], fit.error('t2_star')):
        flags = flags + ('T2* above 2 T1',)
    return NodeResult(estimates, {'t2_star': estimates['t2_star'][0]}, {'ramsey': _coherence_frame(result, n_shots)},
                      {'ramsey': fit}, flags)


def echo_node(device, settings, rng, n_points=61, span_factor=4., n_shots=DEFAULT_SHOTS):
    t2 = settings.t2_star or settings.t2_guess
    result = timedomain.measure_echo(device, settings, np.linspace(0., span_factor * t2, n_points), rng, n_shots)
    fit = result.fit
    estimates = {'t2_echo': (float(fit['t2_echo']), float(fit.error('t2_echo')))}
    return NodeResult(estimates, datasets={'echo': _coherence_frame(result, n_shots)}, fits={'echo': fit},
                      flags=result.flags)


def drag_node(device, settings, rng, drag_values=None, n_shots=DEFAULT_SHOTS):
    result = drag_calibration(device, settings, rng, drag_values, n_shots)
    data = _frame(drag=result.drag_values, difference=result.difference)
    return NodeResult({'drag': (result.drag, result.error)}, {'drag': result.drag}, {'drag': data})


def pulse_train_node(device, settings, rng, n_list=PULSE_TRAIN_N, n_shots=2000):
    result = pulse_train_amplitude_cal(device, settings, rng, n_list, n_shots)
    estimates = {'pi_amplitude': (result.pi_amplitude, result.pi_amplitude * result.error),
                 'pi_half_amplitude': (result.pi_half_amplitude, 0.),
                 'pulse_train_epsilon': (result.epsilon, result.error)}
    data = _frame(n=result.n_list, population=result.populations)
    return NodeResult(estimates, {'pi_amplitude': result.pi_amplitude, 'pi_half_amplitude': result.pi_half_amplitude},
                      {'pulse_train': data})


def allxy_node(device, settings, rng, n_repeats=2, n_shots=DEFAULT_SHOTS):
    result = allxy(device, settings, rng, n_repeats, n_shots)
    estimates = {'allxy_deviation': (float(np.max(np.abs(result.trace - result.ideal))), 0.)}
    labels = [''.join(pair) for pair in load_table('allxy.json')['pairs']]
    data = _frame(pair=labels, population=result.trace, error=result.errors, ideal=result.ideal)
    return NodeResult(estimates, datasets={'allxy': data}, flags=('syndrome: ' + result.syndrome,))


def readout_characterization_node(device, settings, rng, n_shots=10000):
    result = readout.run_butterfly(device, settings, rng, n_shots)
    estimates = {'readout_fidelity': (result.fidelity, 0.), 'readout_qndness': (result.qndness, 0.)}
    flags = ('QND-ness clipped',) if result.clipped else ()
    post = result.post_probabilities
    data = _frame(outcome=[0, 1], prepared_0=post[:, 0], prepared_1=post[:, 1])
    transitions = result.transitions.reshape(4, 2)
    conditional = _frame(prepared=[0, 0, 1, 1], first_outcome=[0, 1, 0, 1], outcome_0=transitions[:, 0],
                         outcome_1=transitions[:, 1])
    return NodeResult(estimates, datasets={'butterfly': data, 'butterfly_transitions': conditional}, flags=flags)


def zz_echo_node(device, settings, rng, pair=(0, 1), delays=None, n_averages=1000):
    result = gates.zz_echo_experiment(device, rng, delays, pair, n_averages)
    return NodeResult({'zeta': (result.zeta, result.error)}, fits={'zz_echo': result.fit})


EXPERIMENTS = {
    'mixer_calibration': mixer_calibration_node,
    'resonator_spectroscopy': resonator_spectroscopy_node,
    'resonator_power_scan': resonator_power_scan_node,
    'resonator_flux_sweep': resonator_flux_sweep_node,
    'qubit_spectroscopy': qubit_spectroscopy_node,
    'anharmonicity': anharmonicity_node,
    'rabi': rabi_node,
    'dispersive_shift': dispersive_shift_node,
    'readout_optimization': readout_optimization_node,
    'ramsey_frequency': ramsey_frequency_node,
    't1': t1_node,
    'ramsey': ramsey_node,
    'echo': echo_node,
    'drag': drag_node,
    'pulse_train': pulse_train_node,
    'allxy': allxy_node,
    'readout_characterization': readout_characterization_node,
    'zz_echo': zz_echo_node,
}


def default_graph():
    """The single qubit tuneup graph shipped in data/default_graph.json"""
    return CalibGraph.from_dict(load_table('default_graph.json'), EXPERIMENTS)
