"""
JSON configuration files: the device file, the calibration graph file and the budget config.

Keys carry their unit as a suffix (_hz, _s, _per_s, _k, _db, ...) and are translated into the fields of the frozen
dataclasses the rest of the package works with. Unknown keys are rejected, and both schema violations and the
invariants the dataclasses check on construction are reported as ConfigError with the file and the line of the
offending key.
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field

from cqedtwin.budgets import AmpStage, ChainStage, LossContribution
from cqedtwin.calibration import CalibGraph
from cqedtwin.device import DEFAULT_LEVELS, GroundTruth, MixerImperfections, ReadoutLine
from cqedtwin.errors import ConfigError, InputError
from cqedtwin.simulator import DEFAULT_S21_NOISE, DEFAULT_SPECTRUM_FLOOR, VirtualDevice
from cqedtwin.timedomain import ControlSettings

logger = logging.getLogger(__name__)

REQUIRED = object()

# Config key -> (field name, type, default); REQUIRED marks mandatory keys
GROUND_TRUTH_KEYS = {
    'qubit_frequency_hz': ('qubit_frequency', float, REQUIRED),
    'anharmonicity_hz': ('anharmonicity', float, REQUIRED),
    't1_s': ('t1', float, REQUIRED),
    't_phi_s': ('t_phi', float, REQUIRED),
    'resonator_frequency_hz': ('resonator_frequency', float, REQUIRED),
    'g_hz': ('g', float, REQUIRED),
    'kappa_c_per_s': ('kappa_c', float, REQUIRED),
    'kappa_i_per_s': ('kappa_i', float, REQUIRED),
    'readout_efficiency': ('readout_efficiency', float, 1.),
    'n_th': ('n_th', float, 0.),
    'flux_period_a': ('flux_period', float, None),
    'sweet_spot_current_a': ('sweet_spot_current', float, 0.),
    'zz_matrix_hz': ('zz_matrix', list, None),
    'drive_rate_rad_per_s': ('drive_rate', float, None),
}
MIXER_KEYS = {
    'lo_leak_re': ('lo_leak_re', float, 0.),
    'lo_leak_im': ('lo_leak_im', float, 0.),
    'imbalance': ('imbalance', float, 0.),
    'skew_rad': ('skew', float, 0.),
}
LINE_KEYS = {
    'amplitude': ('amplitude', float, 1.),
    'slope': ('slope', float, 0.),
    'delay_s': ('delay', float, 0.),
    'phase_rad': ('phase', float, 0.),
    'attenuation_db': ('attenuation_db', float, 70.),
}
SIMULATOR_KEYS = {
    'n_levels': ('n_levels', int, DEFAULT_LEVELS),
    's21_noise': ('s21_noise', float, DEFAULT_S21_NOISE),
    'spectrum_floor': ('spectrum_floor', float, DEFAULT_SPECTRUM_FLOOR),
}
SETTINGS_KEYS = {
    'resonator_guess_hz': ('resonator_guess', float, None),
    'qubit_guess_hz': ('qubit_guess', float, None),
    'anharmonicity_guess_hz': ('anharmonicity_guess', float, 250e6),
    't1_guess_s': ('t1_guess', float, 30e-6),
    't2_guess_s': ('t2_guess', float, 20e-6),
    'flux_period_guess_a': ('flux_period_guess', float, None),
    'tunable': ('tunable', bool, False),
    'input_attenuation_db': ('input_attenuation_db', float, 70.),
    'sample_period_s': ('sample_period', float, 1e-9),
}
CHAIN_STAGE_KEYS = {
    'temperature_k': ('temperature', float, REQUIRED),
    'attenuation_db': ('attenuation_db', float, 0.),
    'cable_loss_db': ('cable_loss_db', float, 0.),
    'label': ('label', str, ''),
}
AMP_STAGE_KEYS = {
    'gain_db': ('gain_db', float, REQUIRED),
    'noise_temperature_k': ('noise_temperature', float, REQUIRED),
    'label': ('label', str, ''),
}
LOSS_KEYS = {
    'label': ('label', str, REQUIRED),
    'participation': ('participation', float, REQUIRED),
    'loss': ('loss', float, REQUIRED),
}
WIRING_KEYS = {
    'qubit_frequency_hz': ('qubit_frequency', float, REQUIRED),
    'c_sigma_f': ('c_sigma', float, REQUIRED),
    'z0_ohm': ('z0', float, 50.),
    'drive_cc_f': ('drive_cc', float, REQUIRED),
    'flux_cc_f': ('flux_cc', float, REQUIRED),
    'flux_lc_h': ('flux_lc', float, REQUIRED),
}
AMPLIFIER_KEYS = {
    'p_signal_w': ('p_signal', float, REQUIRED),
    't_in_k': ('t_in', float, REQUIRED),
    'bandwidth_hz': ('bandwidth', float, REQUIRED),
    'stages': ('stages', list, REQUIRED),
}
DEPHASING_KEYS = {
    'n_th': ('n_th', float, REQUIRED),
    'kappa_per_s': ('kappa', float, REQUIRED),
    'chi_rad_per_s': ('chi', float, REQUIRED),
}


class Source(object):
    """
    The text of a JSON file, used to point errors at the line of a key.

    Args:
        path (str): File name used in messages
        text (str): File contents
    """

    def __init__(self, path, text):
        self.path = path
        self.text = text

    @classmethod
    def read(cls, path):
        try:
            with open(path) as handle:
                return cls(path, handle.read())
        except OSError as error:
            raise ConfigError("Cannot read " + str(path) + ": " + str(error.strerror), path)

    @property
    def digest(self):
        return hashlib.sha256(self.text.encode('utf-8')).hexdigest()

    def parse(self):
        try:
            document = json.loads(self.text)
        except json.JSONDecodeError as error:
            raise ConfigError("Invalid JSON: " + error.msg, self.path, error.lineno)
        if not isinstance(document, dict):
            raise ConfigError("Top level must be a JSON object", self.path, 1)
        return document

    def line_of(self, keys):
        """Line of the last key of a path of object keys (list indices are skipped), or None if not found"""
        position = 0
        for key in keys:
            if isinstance(key, int):
                continue
            found = self.text.find('"' + key + '"', position)
            if found < 0:
                return None
            position = found
        return self.text.count('\n', 0, position) + 1

    def error(self, message, keys):
        return ConfigError(message, self.path, self.line_of(keys))


def _convert(value, kind, source, keys):
    """Type check one value; ints are accepted where floats are expected"""
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise source.error("Key " + repr(keys[-1]) + " must be a number, got " + repr(value), keys)
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise source.error("Key " + repr(keys[-1]) + " must be an integer, got " + repr(value), keys)
        return value
    if not isinstance(value, kind):
        raise source.error("Key " + repr(keys[-1]) + " must be of type " + kind.__name__, keys)
    return value


def read_section(section, schema, source, keys):
    """
    Translate one JSON object into keyword arguments.

    Args:
        section (dict): The object
        schema (dict): Config key -> (field name, type, default)
        source (Source): Where the object came from
        keys (tuple): Path of the object in the document

    Returns:
        dict: Field name -> value for every key of the schema

    Raises:
        ConfigError: On an unknown key, a missing required key or a value of the wrong type
    """
    if not isinstance(section, dict):
        raise source.error("Section " + repr(keys[-1] if keys else '') + " must be an object", keys)
    unknown = sorted(set(section) - set(schema))
    if unknown:
        raise source.error("Unknown key " + repr(unknown[0]) + "; expected one of " + ", ".join(sorted(schema)),
                           keys + (unknown[0],))
    values = {}
    for key, (name, kind, default) in schema.items():
        if key in section and section[key] is not None:
            values[name] = _convert(section[key], kind, source, keys + (key,))
        elif default is REQUIRED:
            raise source.error("Missing required key " + repr(key), keys)
        else:
            values[name] = default
    return values


def _build(cls, values, source, keys):
    """Construct a dataclass, turning its invariant checks into ConfigErrors"""
    try:
        return cls(**values)
    except InputError as error:
        raise source.error(str(error), keys)


def _check_top_level(document, allowed, source):
    unknown = sorted(set(document) - set(allowed))
    if unknown:
        raise source.error("Unknown section " + repr(unknown[0]) + "; expected one of " + ", ".join(sorted(allowed)),
                           (unknown[0],))


def _stages(entries, schema, cls, source, keys):
    if not isinstance(entries, list):
        raise source.error("Section " + repr(keys[-1]) + " must be a list", keys)
    return tuple(_build(cls, read_section(entry, schema, source, keys + (i,)), source, keys)
                 for i, entry in enumerate(entries))


@dataclass(frozen=True)
class DeviceFile:
    """
    A loaded device file.

    Vars:
        ground_truth (GroundTruth): Hidden device parameters
        line (ReadoutLine): The measurement chain
        settings (ControlSettings): Starting settings holding the design guesses
        input_chain (tuple): ChainStage entries of the input line
        output_chain (tuple): AmpStage entries of the output line
        simulator (dict): Keyword arguments of the VirtualDevice
        seed (int): Default seed of runs on this device
        path (str): Where the file was read from
        digest (str): sha256 of the file contents
    """
    ground_truth: GroundTruth
    line: ReadoutLine = field(default_factory=ReadoutLine)
    settings: ControlSettings = field(default_factory=ControlSettings)
    input_chain: tuple = ()
    output_chain: tuple = ()
    simulator: dict = field(default_factory=dict)
    seed: int = 0
    path: str = None
    digest: str = None

    def device(self, processes=1):
        return VirtualDevice(self.ground_truth, self.line, processes=processes, **self.simulator)


def parse_device(source):
    """
    Build a DeviceFile from a Source.

    Raises:
        ConfigError: On any schema or invariant violation
    """
    document = source.parse()
    _check_top_level(document, ('ground_truth', 'mixer', 'line', 'chains', 'settings', 'simulator', 'seed'), source)
    if 'ground_truth' not in document:
        raise ConfigError("Missing required section 'ground_truth'", source.path, 1)

    mixer = read_section(document.get('mixer', {}), MIXER_KEYS, source, ('mixer',))
    mixer = _build(MixerImperfections, {'lo_leak': complex(mixer.pop('lo_leak_re'), mixer.pop('lo_leak_im')),
                                        **mixer}, source, ('mixer',))

    truth = read_section(document['ground_truth'], GROUND_TRUTH_KEYS, source, ('ground_truth',))
    if truth['drive_rate'] is None:
        del truth['drive_rate']
    if truth['zz_matrix'] is not None:
        truth['zz_matrix'] = tuple(tuple(float(v) for v in row) for row in truth['zz_matrix'])
    ground_truth = _build(GroundTruth, dict(truth, mixer=mixer), source, ('ground_truth',))

    line = _build(ReadoutLine, read_section(document.get('line', {}), LINE_KEYS, source, ('line',)), source,
                  ('line',))
    simulator = read_section(document.get('simulator', {}), SIMULATOR_KEYS, source, ('simulator',))
    settings = _build(ControlSettings, read_section(document.get('settings', {}), SETTINGS_KEYS, source,
                                                    ('settings',)), source, ('settings',))

    chains = document.get('chains', {})
    if not isinstance(chains, dict):
        raise source.error("Section 'chains' must be an object", ('chains',))
    unknown = sorted(set(chains) - {'input', 'output'})
    if unknown:
        raise source.error("Unknown chain " + repr(unknown[0]) + "; expected input or output", ('chains', unknown[0]))
    input_chain = _stages(chains.get('input', []), CHAIN_STAGE_KEYS, ChainStage, source, ('chains', 'input'))
    output_chain = _stages(chains.get('output', []), AMP_STAGE_KEYS, AmpStage, source, ('chains', 'output'))

    seed = _convert(document.get('seed', 0), int, source, ('seed',))
    if seed < 0:
        raise source.error("Seed must be non-negative", ('seed',))
    return DeviceFile(ground_truth, line, settings, input_chain, output_chain, simulator, seed, source.path,
                      source.digest)


def load_device(path):
    return parse_device(Source.read(path))


@dataclass(frozen=True)
class BudgetConfig:
    """
    A loaded budget config.

    Vars:
        frequency (float): Frequency at which thermal photons are evaluated, Hz
        n_in (float): Photons entering each input chain; room temperature occupation when None
        chains (tuple): (name, ChainStage tuple) pairs
        amplifier (dict): Arguments of amplifier_chain_snr, or None
        wiring (dict): Arguments of wiring_T1_limits (qubit frequency in Hz), or None
        dielectric (tuple): LossContribution entries of the capacitive budget
        inductive (tuple): LossContribution entries of the inductive budget
        dephasing (dict): Arguments of thermal_dephasing, or None
        path (str): Where the file was read from
        digest (str): sha256 of the file contents
    """
    frequency: float
    n_in: float = None
    chains: tuple = ()
    amplifier: dict = None
    wiring: dict = None
    dielectric: tuple = ()
    inductive: tuple = ()
    dephasing: dict = None
    path: str = None
    digest: str = None


def parse_budget(source):
    """
    Build a BudgetConfig from a Source.

    Raises:
        ConfigError: On any schema or invariant violation
    """
    document = source.parse()
    _check_top_level(document, ('frequency_hz', 'n_in', 'chains', 'amplifier', 'wiring', 'dielectric', 'inductive',
                                'thermal_dephasing'), source)
    if 'frequency_hz' not in document:
        raise ConfigError("Missing required key 'frequency_hz'", source.path, 1)
    frequency = _convert(document['frequency_hz'], float, source, ('frequency_hz',))
    if not frequency > 0:
        raise source.error("frequency_hz must be positive", ('frequency_hz',))
    n_in = document.get('n_in')
    n_in = None if n_in is None else _convert(n_in, float, source, ('n_in',))

    chains = []
    entries = document.get('chains', [])
    if not isinstance(entries, list):
        raise source.error("Section 'chains' must be a list", ('chains',))
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or set(entry) - {'name', 'stages'} or 'name' not in entry:
            raise source.error("Each chain needs exactly a 'name' and a 'stages' list", ('chains', i))
        chains.append((str(entry['name']), _stages(entry.get('stages', []), CHAIN_STAGE_KEYS, ChainStage, source,
                                                   ('chains', i, 'stages'))))

    amplifier = None
    if document.get('amplifier') is not None:
        amplifier = read_section(document['amplifier'], AMPLIFIER_KEYS, source, ('amplifier',))
        amplifier['stages'] = _stages(amplifier['stages'], AMP_STAGE_KEYS, AmpStage, source, ('amplifier', 'stages'))
    wiring = None
    if document.get('wiring') is not None:
        wiring = read_section(document['wiring'], WIRING_KEYS, source, ('wiring',))
    dephasing = None
    if document.get('thermal_dephasing') is not None:
        dephasing = read_section(document['thermal_dephasing'], DEPHASING_KEYS, source, ('thermal_dephasing',))

    losses = {}
    for name in ('dielectric', 'inductive'):
        losses[name] = _stages(document.get(name, []), LOSS_KEYS, LossContribution, source, (name,))

    return BudgetConfig(frequency, n_in, tuple(chains), amplifier, wiring, losses['dielectric'], losses['inductive'],
                        dephasing, source.path, source.digest)


def load_budget(path):
    return parse_budget(Source.read(path))


def load_graph(path, registry):
    """
    Read a calibration graph file.

    Returns:
        tuple: (CalibGraph, Source)

    Raises:
        ConfigError: If the file is not valid JSON or a node entry is malformed
        GraphError: On an unknown experiment, a dangling dependency or a cycle
    """
    source = Source.read(path)
    document = source.parse()
    _check_top_level(document, ('nodes',), source)
    nodes = document.get('nodes', [])
    if not isinstance(nodes, list):
        raise source.error("Section 'nodes' must be a list", ('nodes',))
    allowed = {'name', 'experiment', 'dependencies', 'acceptance', 'params', 'optional'}
    for i, entry in enumerate(nodes):
        if not isinstance(entry, dict) or 'name' not in entry:
            raise source.error("Node " + str(i) + " must be an object with a 'name'", ('nodes',))
        unknown = sorted(set(entry) - allowed)
        if unknown:
            raise source.error("Unknown key " + repr(unknown[0]) + " in node " + repr(entry['name']),
                               ('nodes', entry['name'], unknown[0]))
    return CalibGraph.from_dict(document, registry), source
