"""
Closed loop studies of the calibration pipeline against hidden ground truth.

A study draws devices from a range of healthy parameters, hands the tuneup only the design guesses an experimenter
would have, and compares what the pipeline reports with what the simulator was hiding. The same machinery injects
known gate errors to score the ALLXY syndrome classifier.

The module also provides the settings a perfectly calibrated experimenter would hold for a given ground truth, which
the command line front end uses to simulate single experiments and the tests use to exercise one experiment at a time.
"""
import logging
from functools import partial
from multiprocessing import Pool

import numpy as np
import pandas as pd
from scipy.constants import h
from scipy.optimize import brentq, minimize_scalar

from cqedtwin import tuneup
from cqedtwin.calibration import PASS, run_tuneup_graph
from cqedtwin.circuit import critical_photon_number
from cqedtwin.device import GroundTruth
from cqedtwin.errors import CalibrationError, FitError
from cqedtwin.numerics import RngStream
from cqedtwin.simulator import VirtualDevice
from cqedtwin.timedomain import CALIBRATION_POINT_FACTOR, DEFAULT_SHOTS, ControlSettings, drag_pulse, gate_sequence, \
    measure_signals

logger = logging.getLogger(__name__)

# (low, high) of the uniformly drawn parameters of a healthy device
HEALTHY_RANGES = {
    'qubit_frequency': (4.5e9, 6.0e9),
    'anharmonicity': (200e6, 300e6),
    't1': (30e-6, 100e-6),
    't_phi': (40e-6, 150e-6),
    'resonator_frequency': (6.8e9, 7.5e9),
    'g': (50e6, 90e6),
    'kappa_c': (2 * np.pi * 0.5e6, 2 * np.pi * 2e6),
    'kappa_i': (2 * np.pi * 10e3, 2 * np.pi * 50e3),
    'readout_efficiency': (0.3, 0.8),
    'n_th': (0., 0.01),
}
# Standard deviation of the design guesses handed to the tuneup
DESIGN_ERRORS = {'resonator': 2e6, 'qubit': 20e6, 'anharmonicity': 0.05}
# Oracle readout power as a fraction of the critical photon number
READOUT_PHOTON_FRACTION = 0.1
# DRAG coefficients searched for the sign change of the noiseless x-Y minus y-X difference
ORACLE_DRAG_GRID = np.linspace(-1., 1., 41)


def oracle_pi_amplitude(gt, settings):
    """Amplitude of a DRAG-free pulse rotating the qubit by exactly pi"""
    shape = drag_pulse(1., 0., settings.sigma, settings.pulse_duration, settings.sample_period).envelope.real
    return np.pi / (gt.drive_rate * shape.sum() * settings.sample_period)


def oracle_gates(gt, settings):
    """
    Gates calibrated without noise on a decoherence-free copy of the hidden transmon.

    The DRAG coefficient nulls P(x then Y) - P(y then X), after which the pi amplitude maximises the population
    leaving the ground state after X and the pi/2 amplitude puts x on the equator. This is the order in which the
    tuneup calibrates them.

    Args:
        gt (GroundTruth): The hidden parameters
        settings (ControlSettings): Settings providing pulse shapes and timing

    Returns:
        ControlSettings: The settings with qubit frequency, anharmonicity, drag and both amplitudes set
    """
    pi_amplitude = oracle_pi_amplitude(gt, settings)
    settings = settings.updated(qubit_frequency=gt.qubit_frequency_at(0.), anharmonicity=gt.anharmonicity,
                                pi_amplitude=pi_amplitude, pi_half_amplitude=0.5 * pi_amplitude)
    model = tuneup.reference_device(settings)

    def excited(trial, gates):
        rho = model.final_state(gate_sequence(trial, gates, n_readouts=0))
        return 1. - float(np.real(rho[0, 0]))

    def drag_difference(drag):
        trial = settings.updated(drag=float(drag))
        return excited(trial, ['x', 'Y']) - excited(trial, ['y', 'X'])

    differences = np.array([drag_difference(d) for d in ORACLE_DRAG_GRID])
    changes = np.nonzero(np.diff(np.sign(differences)) != 0)[0]
    if len(changes):
        k = min(changes, key=lambda c: abs(ORACLE_DRAG_GRID[c] + ORACLE_DRAG_GRID[c + 1]))
        drag = float(brentq(drag_difference, ORACLE_DRAG_GRID[k], ORACLE_DRAG_GRID[k + 1], xtol=1e-12))
    else:
        logger.warning("No DRAG coefficient in [-1, 1] equalises x-Y and y-X; keeping zero")
        drag = 0.
    settings = settings.updated(drag=drag)

    best = minimize_scalar(lambda a: -excited(settings.updated(pi_amplitude=a), ['X']),
                           bounds=(0.9 * pi_amplitude, 1.1 * pi_amplitude), method='bounded',
                           options={'xatol': 1e-10 * pi_amplitude})
    settings = settings.updated(pi_amplitude=float(best.x))
    pi_half = brentq(lambda a: excited(settings.updated(pi_half_amplitude=a), ['x']) - 0.5,
                     0.4 * settings.pi_amplitude, 0.6 * settings.pi_amplitude, xtol=1e-12)
    return settings.updated(pi_half_amplitude=float(pi_half))


# Record entry -> function of the ground truth it estimates
RECOVERED = {
    'resonator_frequency': lambda gt: gt.dressed_resonator_frequency(0),
    'qubit_frequency': lambda gt: gt.qubit_frequency_at(0.),
    'anharmonicity': lambda gt: gt.anharmonicity,
    'pi_amplitude': lambda gt: oracle_gates(gt, ControlSettings()).pi_amplitude,
    'chi': lambda gt: gt.chi,
    't1': lambda gt: gt.t1,
    't2_star': lambda gt: gt.t2_star,
}
# Record entry -> (ground truth, true value) -> largest acceptable absolute error
RECOVERY_TOLERANCES = {
    'resonator_frequency': lambda gt, truth: gt.kappa / (2 * np.pi) / 20.,
    'qubit_frequency': lambda gt, truth: 10e3,
    'anharmonicity': lambda gt, truth: 2e6,
    'pi_amplitude': lambda gt, truth: 0.005 * abs(truth),
    'chi': lambda gt, truth: 0.05 * abs(truth),
    't1': lambda gt, truth: 0.1 * truth,
    't2_star': lambda gt, truth: 0.1 * truth,
}

# Error syndrome -> size of the error its template was simulated with
ALLXY_TEMPLATE_UNITS = {'detuning': tuneup.ALLXY_DETUNING, 'amplitude': tuneup.ALLXY_AMPLITUDE,
                        'drag': tuneup.ALLXY_DRAG}
# (low, high) norm of an injected deviation in multiples of the noise norm of the classified deviation
ALLXY_INJECTION_SNR = (5., 10.)
ALLXY_STUDY_SHOTS = 10000


def randomized_ground_truth(rng):
    """A fixed frequency device drawn uniformly from HEALTHY_RANGES"""
    generator = rng.generator()
    values = {name: float(generator.uniform(low, high)) for name, (low, high) in sorted(HEALTHY_RANGES.items())}
    return GroundTruth(**values)


def oracle_readout_power(gt, line, photons):
    """Generator power in dBm putting the given steady state photon number in the resonator on resonance"""
    flux = photons * gt.kappa ** 2 / (4. * max(gt.kappa_c, 1e-12 * gt.kappa))
    return float(10. * np.log10(flux * h * gt.resonator_frequency) + 30. + line.attenuation_db)


def settings_from_ground_truth(gt, device, rng, n_shots=DEFAULT_SHOTS, line=None, base=None):
    """
    The settings of a perfectly calibrated experimenter.

    Frequencies and the readout come from the ground truth and the gates from oracle_gates; the calibration points
    are measured on the device so they carry the readout chain as it is.

    Args:
        gt (GroundTruth): The hidden parameters
        device (VirtualDevice): The device built from them
        rng (RngStream): Used for the calibration points
        n_shots (int): Shots per calibration point, times CALIBRATION_POINT_FACTOR
        line (ReadoutLine): The measurement chain; the device's by default
        base (ControlSettings): Settings providing pulse shapes and timing

    Returns:
        ControlSettings: Calibrated settings
    """
    line = line if line is not None else device.line
    settings = (base if base is not None else ControlSettings()).updated(input_attenuation_db=line.attenuation_db)
    coupling = gt.dispersive_at()
    n_crit = critical_photon_number(gt.g, gt.qubit_frequency - gt.resonator_frequency)
    resonator = gt.dressed_resonator_frequency(0)
    settings = oracle_gates(gt, settings).updated(
        resonator_frequency=resonator, readout_frequency=resonator + 0.5 * coupling.chi,
        readout_power_dbm=oracle_readout_power(gt, line, READOUT_PHOTON_FRACTION * n_crit), chi=coupling.chi,
        t1=gt.t1, t2_star=gt.t2_star, tunable=gt.flux_period is not None)
    points = [gate_sequence(settings, []), gate_sequence(settings, ['X'])]
    means, _ = measure_signals(device, points, rng, CALIBRATION_POINT_FACTOR * n_shots)
    return settings.updated(ground_point=complex(means[0]), excited_point=complex(means[1]))


def design_settings(gt, rng, line=None):
    """
    The guesses an experimenter has before the first cooldown: frequencies off by DESIGN_ERRORS, coherence times at
    the defaults.
    """
    generator = rng.generator()
    settings = ControlSettings() if line is None else ControlSettings(input_attenuation_db=line.attenuation_db)
    return settings.updated(
        resonator_guess=gt.dressed_resonator_frequency(0) + DESIGN_ERRORS['resonator'] * generator.standard_normal(),
        qubit_guess=gt.qubit_frequency + DESIGN_ERRORS['qubit'] * generator.standard_normal(),
        anharmonicity_guess=gt.anharmonicity * (1. + DESIGN_ERRORS['anharmonicity'] * generator.standard_normal()),
        flux_period_guess=gt.flux_period, tunable=gt.flux_period is not None)


def _recover_one(index, seed):
    """Tune up device index of a study and compare the record with the truth"""
    stream = RngStream(seed).child(index)
    gt = randomized_ground_truth(stream.child(0))
    device = VirtualDevice(gt)
    graph = tuneup.default_graph()
    report = run_tuneup_graph(graph, device, design_settings(gt, stream.child(1), device.line),
                              seed=int(stream.child(2).stream_id))
    passed = sum(node['state'] == PASS for node in report.nodes.values())
    logger.info("Device %d: %d of %d nodes passed", index, passed, len(report.nodes))
    rows = []
    entries = report.record.as_dict()
    for name, truth in RECOVERED.items():
        truth = float(truth(gt))
        entry = entries.get(name)
        estimate = np.nan if entry is None else float(entry['value'])
        uncertainty = np.nan if entry is None else float(entry['uncertainty'])
        tolerance = float(RECOVERY_TOLERANCES[name](gt, truth))
        rows.append({'device': index, 'parameter': name, 'truth': truth, 'estimate': estimate,
                     'uncertainty': uncertainty, 'relative_error': abs(estimate - truth) / abs(truth),
                     'tolerance': tolerance, 'within_tolerance': bool(abs(estimate - truth) <= tolerance),
                     'tuneup_passed': passed == len(report.nodes)})
    return rows


def recovery_study(n_devices, seed=0, processes=1):
    """
    Run the default tuneup on randomized devices and report how well each parameter was recovered.

    Device i is drawn from child stream i of the seed, so the result does not depend on the number of processes.

    Returns:
        pd.DataFrame: One row per device and parameter with truth, estimate, uncertainty, relative error, the
            acceptable absolute error from RECOVERY_TOLERANCES, whether the estimate is within it and whether every
            node of the device's tuneup passed; NaN estimates mark parameters whose node did not pass
    """
    worker = partial(_recover_one, seed=seed)
    if processes > 1:
        with Pool(processes) as pool:
            results = pool.map(worker, range(n_devices))
    else:
        results = list(map(worker, range(n_devices)))
    return pd.DataFrame([row for rows in results for row in rows])


def inject_allxy_error(settings, syndrome, magnitude):
    """Settings carrying a known error of one ALLXY syndrome"""
    if syndrome == 'detuning':
        return settings.updated(qubit_frequency=settings.qubit_frequency - magnitude)
    if syndrome == 'amplitude':
        return settings.updated(pi_amplitude=settings.pi_amplitude * (1. + magnitude),
                                pi_half_amplitude=settings.pi_half_amplitude * (1. + magnitude))
    return settings.updated(drag=settings.drag + magnitude)


def allxy_classifier_study(n_injections, seed=0, gt=None, n_shots=ALLXY_STUDY_SHOTS):
    """
    Inject labelled gate errors and score the ALLXY classifier.

    A clean trace of the calibrated gates is measured once with CALIBRATION_POINT_FACTOR times the shots, and every
    injected trace is classified by its deviation from it. Each injection picks a syndrome, a sign and a signal to
    noise ratio from ALLXY_INJECTION_SNR; its magnitude is the error whose template deviation has that norm in units
    of the noise norm of the classified deviation.

    Args:
        n_injections (int): Number of labelled injections
        seed (int): Seed of every random stream
        gt (GroundTruth): The device; drawn with randomized_ground_truth when None
        n_shots (int): Shots per sequence of an injected trace

    Returns:
        (pd.DataFrame, float): One row per injection (label, magnitude, signal to noise ratio, predicted syndrome,
            severity) and the fraction classified correctly
    """
    rng = RngStream(seed)
    gt = gt if gt is not None else randomized_ground_truth(rng.child(0))
    device = VirtualDevice(gt)
    calibrated = settings_from_ground_truth(gt, device, rng.child(1), n_shots)
    templates = tuneup.allxy_templates(calibrated)
    clean = tuneup.allxy(device, calibrated, rng.child(2), n_shots=CALIBRATION_POINT_FACTOR * n_shots,
                         templates=templates)
    noise = float(np.linalg.norm(clean.errors)) * np.sqrt(CALIBRATION_POINT_FACTOR + 1.)
    logger.info("Clean ALLXY trace: syndrome %s, noise norm %.3g", clean.syndrome, noise)
    generator = rng.child(3).generator()

    rows = []
    for i in range(n_injections):
        syndrome = tuneup.SYNDROMES[int(generator.integers(len(tuneup.SYNDROMES)))]
        snr = float(generator.uniform(*ALLXY_INJECTION_SNR))
        sign = 1. if generator.random() < 0.5 else -1.
        magnitude = sign * snr * noise / np.linalg.norm(templates[syndrome]) * ALLXY_TEMPLATE_UNITS[syndrome]
        settings = inject_allxy_error(calibrated, syndrome, magnitude)
        try:
            result = tuneup.allxy(device, settings, rng.child(4 + i), n_shots=n_shots, templates=templates,
                                  reference=clean)
            predicted, severity = result.syndrome, result.severity
        except (CalibrationError, FitError) as error:
            logger.debug("Injection %d failed: %s", i, error)
            predicted, severity = 'failed', np.nan
        rows.append({'injection': i, 'syndrome': syndrome, 'magnitude': magnitude, 'snr': snr,
                     'predicted': predicted, 'severity': severity})
    frame = pd.DataFrame(rows)
    accuracy = float(np.mean(frame['syndrome'] == frame['predicted'])) if len(frame) else np.nan
    logger.info("ALLXY classifier: %d injections, accuracy %.3f", len(frame), accuracy)
    return frame, accuracy
