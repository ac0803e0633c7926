"""
Command line front end.

    cqedtwin budget CONFIG                  thermal photon, T1 limit and amplifier tables
    cqedtwin simulate DEVICE EXPERIMENT     a raw dataset from the virtual device
    cqedtwin fit DATASET MODEL              fit a dataset, simulated or measured in the lab
    cqedtwin tuneup DEVICE [--graph GRAPH]  run a calibration graph and write a report

Every file written carries the package version and the sha256 of the inputs it was made from, and nothing else that
changes between runs, so the same inputs and seed give the same bytes. Exit codes: 0 on success, 1 when a calibration
failed, 2 on invalid input.
"""
import argparse
import hashlib
import logging
import os
import sys
from functools import partial

import numpy as np
import pandas as pd

from cqedtwin import __version__, budgets, recovery, spectroscopy, timedomain, tuneup
from cqedtwin.calibration import dumps, report_document, report_passed, run_tuneup_graph, stream_id, write_dataset
from cqedtwin.config import load_budget, load_device, load_graph
from cqedtwin.device import hanger_s21
from cqedtwin.errors import CalibrationError, FitError, GraphError, InputError, IntegrationError
from cqedtwin.numerics import RngStream
from cqedtwin.simulator import SweepSpec
from cqedtwin.timedomain import gate_sequence, measure_populations

logger = logging.getLogger(__name__)

# Exit codes
EXIT_OK = 0
EXIT_CALIBRATION_FAILED = 1
EXIT_INPUT_ERROR = 2

# Points of a simulated dataset when --points is not given
DEFAULT_POINTS = {'s21': 801, 'qubit_spectroscopy': 201, 'rabi': 41, 't1': 41, 'ramsey': 101, 'echo': 61}
# Span of the resonator sweep, Hz
S21_SPAN = 20e6
# Span and drive rate of the qubit spectroscopy sweep
QUBIT_SPAN = 2e6
QUBIT_DRIVE_RATE = 2 * np.pi * 30e3
# Delay spans in multiples of the relevant decay time
T1_SPAN_FACTOR = 4.
RAMSEY_SPAN_FACTOR = 3.
ECHO_SPAN_FACTOR = 4.
# Fringes across a simulated Ramsey
RAMSEY_OSCILLATIONS = 5.

# Columns each fit model reads
MODEL_COLUMNS = {
    's21': ('frequency', 'I', 'Q'),
    'lorentzian': ('frequency', 'population'),
    't1': ('delay', 'population'),
    'ramsey': ('delay', 'population'),
    'echo': ('delay', 'population'),
    'rabi': ('amplitude', 'population'),
}


def file_digest(path):
    with open(path, 'rb') as handle:
        return hashlib.sha256(handle.read()).hexdigest()


def _input(path, digest):
    return {'path': os.path.basename(path), 'sha256': digest}


def _write_json(path, document):
    with open(path, 'w', newline='\n') as handle:
        handle.write(dumps(document))
    logger.info("Wrote %s", path)
    return path


# Budget


def budget_tables(config):
    """
    The tables of a budget config.

    Returns:
        dict: DataFrames 'chains' (photons after every stage of every chain), 't1_limits' (one row per loss channel
            and a total), and 'amplifier' (the SNR cascade) when the config has an amplifier section
    """
    n_in = config.n_in if config.n_in is not None else budgets.thermal_occupation(config.frequency,
                                                                                 budgets.ROOM_TEMPERATURE)
    rows = []
    for name, stages in config.chains:
        result = budgets.chain_occupation(stages, config.frequency, n_in)
        if not stages:
            rows.append({'chain': name, 'stage': 'passthrough', 'temperature_k': np.nan, 'n_photons': result.n_device})
        for stage, n in zip(stages, result.per_stage):
            rows.append({'chain': name, 'stage': stage.label, 'temperature_k': stage.temperature, 'n_photons': n})
        rows.append({'chain': name, 'stage': 'device', 'temperature_k': np.nan, 'n_photons': result.n_device})
    tables = {'chains': pd.DataFrame(rows, columns=['chain', 'stage', 'temperature_k', 'n_photons'])}

    rates = {}
    if config.wiring is not None:
        wiring = config.wiring
        limits = budgets.wiring_T1_limits(2 * np.pi * wiring['qubit_frequency'], wiring['c_sigma'], wiring['z0'],
                                          wiring['drive_cc'], wiring['flux_cc'], wiring['flux_lc'])
        rates['drive_line'] = limits.gamma_drive
        rates['flux_line'] = limits.gamma_flux
        omega = 2 * np.pi * wiring['qubit_frequency']
    else:
        omega = 2 * np.pi * config.frequency
    if config.dielectric:
        loss = budgets.dielectric_loss_budget(config.dielectric, omega)
        for contrib, rate in zip(config.dielectric, loss.breakdown):
            rates['dielectric:' + contrib.label] = rate
    if config.inductive:
        rates['inductive'] = budgets.inductive_loss_budget(config.inductive, omega)
    if config.dephasing is not None:
        rates['thermal_dephasing'] = budgets.thermal_dephasing(**config.dephasing)
    coherence = budgets.coherence_budget(rates)
    limit_rows = [{'channel': name, 'rate_per_s': rate, 't1_limit_s': limit} for name, rate, limit in coherence.rows]
    if limit_rows:
        limit_rows.append({'channel': 'total', 'rate_per_s': coherence.total_rate, 't1_limit_s': coherence.t1_limit})
    tables['t1_limits'] = pd.DataFrame(limit_rows, columns=['channel', 'rate_per_s', 't1_limit_s'])

    if config.amplifier is not None:
        amplifier = config.amplifier
        amp_rows = []
        for i in range(1, len(amplifier['stages']) + 1):
            partial = budgets.amplifier_chain_snr(amplifier['p_signal'], amplifier['t_in'], amplifier['bandwidth'],
                                                  amplifier['stages'][:i])
            amp_rows.append({'after': amplifier['stages'][i - 1].label, 'noise_temperature_k':
                             partial.effective_noise_temperature, 'snr_ratio': partial.snr_ratio,
                             'snr_out': partial.snr_out})
        tables['amplifier'] = pd.DataFrame(amp_rows, columns=['after', 'noise_temperature_k', 'snr_ratio', 'snr_out'])
    return tables


def cmd_budget(args):
    config = load_budget(args.config)
    tables = budget_tables(config)
    metadata = {'version': __version__, 'input': _input(config.path, config.digest)}
    for name, frame in tables.items():
        logger.info("%s\n%s", name, frame.to_string(index=False))
    if args.format == 'json':
        document = dict(metadata, tables={name: frame.to_dict(orient='records') for name, frame in tables.items()})
        _write_json(os.path.join(args.out_dir, 'budget.json'), document)
    else:
        for name, frame in tables.items():
            write_dataset(os.path.join(args.out_dir, 'budget_' + name + '.csv'), frame, dict(metadata, table=name))
    return EXIT_OK


# Simulate


def _points(args, experiment):
    return args.points if args.points is not None else DEFAULT_POINTS.get(experiment)


def _empty(columns):
    return pd.DataFrame({name: [] for name in columns})


def simulate_s21(device, settings, rng, n_points, n_shots):
    columns = ('frequency', 'I', 'Q', 'shots')
    if n_shots == 0:
        return _empty(columns)
    center = settings.resonator_frequency
    f = np.linspace(center - 0.5 * S21_SPAN, center + 0.5 * S21_SPAN, n_points)
    spec = SweepSpec('s21', {'frequency': f}, {'power_dbm': spectroscopy.LOW_POWER_DBM,
                                               'flux_bias': settings.flux_bias}, n_shots)
    s21 = device.execute(spec, rng=rng).data
    return pd.DataFrame({'frequency': f, 'I': s21.real, 'Q': s21.imag, 'shots': np.full(n_points, n_shots)})


def simulate_qubit_spectroscopy(device, settings, rng, n_points, n_shots):
    columns = ('frequency', 'population', 'shots')
    if n_shots == 0:
        return _empty(columns)
    center = settings.qubit_frequency
    f = np.linspace(center - 0.5 * QUBIT_SPAN, center + 0.5 * QUBIT_SPAN, n_points)
    spec = SweepSpec('qubit_spectroscopy', {'frequency': f}, {'drive_rate': QUBIT_DRIVE_RATE,
                                                              'flux_bias': settings.flux_bias}, n_shots)
    population = device.execute(spec, rng=rng).data
    return pd.DataFrame({'frequency': f, 'population': population, 'shots': np.full(n_points, n_shots)})


def _population_frame(axis, values, sequences, device, settings, rng, n_shots):
    populations = measure_populations(device, settings, sequences, rng, n_shots)
    return pd.DataFrame({axis: values, 'population': populations, 'shots': np.full(len(values), n_shots)})


def simulate_rabi(device, settings, rng, n_points, n_shots):
    if n_shots == 0:
        return _empty(('amplitude', 'population', 'shots'))
    amplitudes = np.linspace(0., min(2.5 * settings.pi_amplitude, 1.), n_points)
    pulses = [timedomain.drag_pulse(a, 0., settings.sigma, settings.pulse_duration, settings.sample_period)
              for a in amplitudes]
    sequences = [gate_sequence(settings, [pulse]) for pulse in pulses]
    return _population_frame('amplitude', amplitudes, sequences, device, settings, rng, n_shots)


def simulate_t1(device, settings, rng, n_points, n_shots):
    if n_shots == 0:
        return _empty(('delay', 'population', 'shots'))
    delays = settings.on_grid(np.linspace(0., T1_SPAN_FACTOR * settings.t1, n_points))
    sequences = [gate_sequence(settings, ['X'], waits=[tau]) for tau in delays]
    return _population_frame('delay', delays, sequences, device, settings, rng, n_shots)


def simulate_ramsey(device, settings, rng, n_points, n_shots):
    if n_shots == 0:
        return _empty(('delay', 'population', 'shots'))
    span = RAMSEY_SPAN_FACTOR * settings.t2_star
    delays = settings.on_grid(np.linspace(0., span, n_points))
    detuning = RAMSEY_OSCILLATIONS / span
    sequences = [gate_sequence(settings, ['x', 'x'], waits=[tau, 0.], phases=[0., 2 * np.pi * detuning * tau])
                 for tau in delays]
    return _population_frame('delay', delays, sequences, device, settings, rng, n_shots)


def simulate_echo(device, settings, rng, n_points, n_shots):
    if n_shots == 0:
        return _empty(('delay', 'population', 'shots'))
    halves = settings.on_grid(0.5 * np.linspace(0., ECHO_SPAN_FACTOR * settings.t2_star, n_points))
    sequences = [gate_sequence(settings, ['x', 'X', 'x'], waits=[half, half, 0.]) for half in halves]
    return _population_frame('delay', 2 * halves, sequences, device, settings, rng, n_shots)


def simulate_allxy(device, settings, rng, n_points, n_shots):
    columns = ('pair', 'ideal', 'population', 'error', 'syndrome')
    if n_shots == 0:
        return _empty(columns)
    result = tuneup.allxy(device, settings, rng, n_shots=n_shots)
    pairs = ['-'.join(pair) for pair in tuneup.load_table('allxy.json')['pairs']]
    return pd.DataFrame({'pair': pairs, 'ideal': result.ideal, 'population': result.trace, 'error': result.errors,
                         'syndrome': [result.syndrome] * len(pairs)})


SIMULATIONS = {
    's21': simulate_s21,
    'qubit_spectroscopy': simulate_qubit_spectroscopy,
    'rabi': simulate_rabi,
    't1': simulate_t1,
    'ramsey': simulate_ramsey,
    'echo': simulate_echo,
    'allxy': simulate_allxy,
}


def cmd_simulate(args):
    if args.experiment not in SIMULATIONS:
        raise InputError("Unknown experiment " + repr(args.experiment) + "; choose from "
                         + ", ".join(sorted(SIMULATIONS)))
    device_file = load_device(args.device)
    seed = args.seed if args.seed is not None else device_file.seed
    device = device_file.device(args.processes)
    settings = device_file.settings
    if args.shots > 0:
        settings = recovery.settings_from_ground_truth(device_file.ground_truth, device,
                                                       RngStream(seed, stream_id('calibration_points')), args.shots,
                                                       base=device_file.settings)
    frame = SIMULATIONS[args.experiment](device, settings, RngStream(seed, stream_id(args.experiment)),
                                         _points(args, args.experiment), args.shots)
    path = os.path.join(args.out_dir, args.experiment + '.csv')
    write_dataset(path, frame, {'version': __version__, 'experiment': args.experiment, 'seed': seed,
                                'shots': args.shots, 'input': _input(device_file.path, device_file.digest)})
    logger.info("Wrote %d rows to %s", len(frame), path)
    return EXIT_OK


# Fit


def read_dataset(path, columns):
    """A CSV dataset with '#' metadata lines, checked for the columns a model needs"""
    try:
        frame = pd.read_csv(path, comment='#')
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as error:
        raise InputError("Cannot read dataset " + str(path) + ": " + str(error))
    missing = [name for name in columns if name not in frame.columns]
    if missing:
        raise InputError("Dataset " + str(path) + " lacks columns " + ", ".join(missing) + "; has "
                         + ", ".join(frame.columns))
    if len(frame) == 0:
        raise InputError("Dataset " + str(path) + " has no rows")
    return frame


def fit_dataset(frame, model, envelope_offset=False):
    """
    Fit one model to a dataset. With envelope_offset a Ramsey fringe is fitted with an offset inside its envelope.

    Returns:
        (FitResult, dict, np.ndarray, np.ndarray, np.ndarray): The fit, derived quantities, the independent variable,
            the data and the model evaluated at the solution
    """
    if model == 's21':
        x = frame['frequency'].to_numpy(dtype=float)
        y = frame['I'].to_numpy(dtype=float) + 1j * frame['Q'].to_numpy(dtype=float)
        result = spectroscopy.fit_resonator(x, y)
        derived = {'kappa_i': result.kappa_i, 'q_c': result.q_c, 'q_i': result.q_i, 'delay': result.line.delay}
        curve = hanger_s21(x, result.frequency, result.kappa, result.kappa_c, result.line)
        return result.fit, derived, x, y, curve
    x = frame[MODEL_COLUMNS[model][0]].to_numpy(dtype=float)
    y = frame['population'].to_numpy(dtype=float)
    fitter, function = {
        'lorentzian': (spectroscopy.fit_lorentzian, spectroscopy.lorentzian),
        't1': (timedomain.fit_T1, timedomain.exponential_decay),
        'ramsey': (timedomain.fit_ramsey, timedomain.ramsey_fringe),
        'echo': (timedomain.fit_echo, timedomain.stretched_decay),
        'rabi': (timedomain.fit_rabi, timedomain.rabi_signal),
    }[model]
    if envelope_offset:
        if model != 'ramsey':
            raise InputError("An envelope offset applies to the ramsey model only")
        fitter = partial(timedomain.fit_ramsey, fit_envelope_offset=True)
        function = timedomain.ramsey_fringe_with_envelope_offset
    fit = fitter(x, y)
    return fit, {}, x, y, function(x, *fit.params)


def _residual_columns(x, y, curve):
    if np.iscomplexobj(y):
        return {'x': x, 'data_re': y.real, 'data_im': y.imag, 'model_re': curve.real, 'model_im': curve.imag,
                'residual': np.abs(y - curve)}
    return {'x': x, 'data': y, 'model': curve, 'residual': y - curve}


def cmd_fit(args):
    if args.model not in MODEL_COLUMNS:
        raise InputError("Unknown model " + repr(args.model) + "; choose from " + ", ".join(sorted(MODEL_COLUMNS)))
    frame = read_dataset(args.dataset, MODEL_COLUMNS[args.model])
    stem = os.path.splitext(os.path.basename(args.dataset))[0] + '_' + args.model
    metadata = {'version': __version__, 'model': args.model, 'input': _input(args.dataset,
                                                                            file_digest(args.dataset))}
    if args.envelope_offset:
        metadata['envelope_offset'] = True
    try:
        fit, derived, x, y, curve = fit_dataset(frame, args.model, args.envelope_offset)
    except FitError as error:
        logger.error("Fit failed: %s", error)
        _write_json(os.path.join(args.out_dir, stem + '_fit.json'), dict(metadata, converged=False, error=str(error)))
        return EXIT_CALIBRATION_FAILED
    if not fit.converged:
        logger.warning("The %s fit did not converge", args.model)
    residual = _residual_columns(x, y, curve)
    if args.format == 'json':
        document = dict(metadata, fit=fit.as_dict(), derived=derived, converged=bool(fit.converged),
                        residual={name: np.asarray(values).tolist() for name, values in residual.items()})
        _write_json(os.path.join(args.out_dir, stem + '_fit.json'), document)
    else:
        fit_metadata = dict(metadata, converged=bool(fit.converged), residual_norm=fit.residual_norm, derived=derived)
        params = fit.as_dict()
        table = pd.DataFrame({'parameter': list(params['params']), 'value': list(params['params'].values()),
                              'stderr': list(params['stderr'].values())})
        write_dataset(os.path.join(args.out_dir, stem + '_fit.csv'), table, fit_metadata)
        write_dataset(os.path.join(args.out_dir, stem + '_residual.csv'), pd.DataFrame(residual), metadata)
    for name, value in fit.as_dict()['params'].items():
        logger.info("%s = %.6g +- %.2g", name, value, fit.as_dict()['stderr'][name])
    return EXIT_OK


# Tuneup


def cmd_tuneup(args):
    device_file = load_device(args.device)
    graph_path = args.graph if args.graph is not None else os.path.join(tuneup.DATA_DIR, 'default_graph.json')
    graph, graph_source = load_graph(graph_path, tuneup.EXPERIMENTS)
    seed = args.seed if args.seed is not None else device_file.seed
    report = run_tuneup_graph(graph, device_file.device(args.processes), device_file.settings, seed=seed,
                              processes=args.processes, out_dir=args.out_dir)
    inputs = {'device': _input(device_file.path, device_file.digest),
              'graph': _input(graph_source.path, graph_source.digest)}
    _write_json(os.path.join(args.out_dir, 'report.json'), report_document(report, inputs))
    if report_passed(graph, report):
        logger.info("All required nodes passed")
        return EXIT_OK
    failed = sorted(name for name, node in report.nodes.items() if node['state'] != 'pass')
    logger.error("Calibration incomplete; not passed: %s", ', '.join(failed))
    return EXIT_CALIBRATION_FAILED


# Entry point


def build_parser():
    parser = argparse.ArgumentParser(prog='cqedtwin', description="Digital twin of a cQED device and its calibration")
    parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    parser.add_argument('--seed', help="Seed of every random stream; the device file's seed by default", type=int)
    parser.add_argument('--out-dir', help="Directory for output files", default='.')
    parser.add_argument('--shots', help="Shots per point of a simulated experiment", type=int,
                        default=timedomain.DEFAULT_SHOTS)
    parser.add_argument('--format', help="Format of budget and fit outputs", choices=('json', 'csv'), default='json')
    parser.add_argument('--processes', help="Worker threads for independent calibration nodes and sequences",
                        type=int, default=1)
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', '-v', action='store_true', help="Log debugging output")
    verbosity.add_argument('--quiet', '-q', action='store_true', help="Log warnings and errors only")

    commands = parser.add_subparsers(dest='command')
    commands.required = True

    budget = commands.add_parser('budget', help="Thermal photon, T1 limit and amplifier budget tables")
    budget.add_argument('config', help="Budget config JSON")
    budget.set_defaults(handler=cmd_budget)

    simulate = commands.add_parser('simulate', help="Simulate one experiment on a device")
    simulate.add_argument('device', help="Device file JSON")
    simulate.add_argument('experiment', help="One of " + ", ".join(sorted(SIMULATIONS)))
    simulate.add_argument('--points', help="Number of sweep points", type=int)
    simulate.set_defaults(handler=cmd_simulate)

    fit = commands.add_parser('fit', help="Fit a dataset")
    fit.add_argument('dataset', help="CSV dataset")
    fit.add_argument('model', help="One of " + ", ".join(sorted(MODEL_COLUMNS)))
    fit.add_argument('--envelope-offset', help="Fit a Ramsey fringe with an offset inside the decay envelope",
                     action='store_true')
    fit.set_defaults(handler=cmd_fit)

    tune = commands.add_parser('tuneup', help="Run a calibration graph against a device")
    tune.add_argument('device', help="Device file JSON")
    tune.add_argument('--graph', help="Calibration graph JSON; the default graph when omitted")
    tune.set_defaults(handler=cmd_tuneup)
    return parser


def configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')


def main(argv=None):
    """Run the command line; returns the exit code"""
    args = build_parser().parse_args(argv)
    configure_logging(args)
    if args.shots < 0:
        logger.error("--shots must be non-negative")
        return EXIT_INPUT_ERROR
    if args.processes < 1:
        logger.error("--processes must be at least one")
        return EXIT_INPUT_ERROR
    try:
        os.makedirs(args.out_dir, exist_ok=True)
        return args.handler(args)
    except (CalibrationError, FitError, IntegrationError) as error:
        logger.error("%s: %s", type(error).__name__, error)
        return EXIT_CALIBRATION_FAILED
    except (InputError, GraphError) as error:
        # InputError covers ConfigError
        logger.error("%s", error)
        return EXIT_INPUT_ERROR


if __name__ == '__main__':
    sys.exit(main())
