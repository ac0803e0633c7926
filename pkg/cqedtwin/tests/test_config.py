"""
Tests for the JSON configuration layer: the shipped files load, and schema violations point at the offending line.
"""
import json
import os

import pytest

from cqedtwin.config import Source, load_budget, load_device, load_graph, parse_budget, parse_device
from cqedtwin.errors import ConfigError, GraphError
from cqedtwin.tuneup import DATA_DIR, EXPERIMENTS

DEVICE_FILE = os.path.join(DATA_DIR, 'device.json')
BUDGET_FILE = os.path.join(DATA_DIR, 'budget.json')
GRAPH_FILE = os.path.join(DATA_DIR, 'default_graph.json')

MINIMAL_TRUTH = {
    'qubit_frequency_hz': 5.5e9,
    'anharmonicity_hz': 250e6,
    't1_s': 50e-6,
    't_phi_s': 80e-6,
    'resonator_frequency_hz': 7.2e9,
    'g_hz': 70e6,
    'kappa_c_per_s': 6.283e6,
    'kappa_i_per_s': 1.257e5,
}


def device_source(truth=None, **sections):
    """A device file with one key per line, so errors can be located"""
    document = dict({'ground_truth': dict(MINIMAL_TRUTH, **(truth or {}))}, **sections)
    return Source('device.json', json.dumps(document, indent=2))


def test_load_device_shippedFile_buildsDevice():
    """The packaged device file loads with its chains, guesses and seed"""
    loaded = load_device(DEVICE_FILE)
    assert loaded.ground_truth.qubit_frequency == 5.5e9
    assert loaded.ground_truth.mixer.lo_leak == 0.002 - 0.001j
    assert len(loaded.input_chain) == 3
    assert len(loaded.output_chain) == 3
    assert loaded.settings.qubit_guess == 5.48e9
    assert loaded.seed == 1234
    assert len(loaded.digest) == 64
    assert loaded.device().ground_truth == loaded.ground_truth


def test_parse_device_minimal_usesDefaults():
    """Optional sections fall back to their defaults"""
    loaded = parse_device(device_source())
    assert loaded.ground_truth.readout_efficiency == 1.
    assert loaded.ground_truth.flux_period is None
    assert loaded.line.attenuation_db == 70.
    assert loaded.seed == 0


def test_parse_device_integerValues_acceptedAsFloats():
    """JSON integers are valid numbers"""
    loaded = parse_device(device_source({'g_hz': 70000000}))
    assert loaded.ground_truth.g == 70e6


def test_parse_device_zzMatrix_isNestedTuple():
    """Residual ZZ is stored as an immutable matrix"""
    loaded = parse_device(device_source({'zz_matrix_hz': [[0, 1e5], [1e5, 0]]}))
    assert loaded.ground_truth.zz_matrix == ((0., 1e5), (1e5, 0.))


def test_parse_device_unknownKey_errorNamesLine():
    """A misspelt key is rejected with the line it sits on"""
    source = device_source({'t1_us': 50.})
    with pytest.raises(ConfigError) as error:
        parse_device(source)
    assert error.value.path == 'device.json'
    assert error.value.line == source.line_of(('ground_truth', 't1_us'))
    assert "t1_us" in str(error.value)


def test_parse_device_missingRequiredKey_raisesConfigError():
    """Every ground truth parameter without a default is mandatory"""
    document = {'ground_truth': {k: v for k, v in MINIMAL_TRUTH.items() if k != 'g_hz'}}
    with pytest.raises(ConfigError, match="g_hz"):
        parse_device(Source('device.json', json.dumps(document)))


def test_parse_device_wrongType_raisesConfigError():
    """Numbers given as strings are rejected"""
    with pytest.raises(ConfigError, match="must be a number"):
        parse_device(device_source({'t1_s': "50e-6"}))


def test_parse_device_booleanNumber_raisesConfigError():
    """Booleans are not numbers in a config"""
    with pytest.raises(ConfigError):
        parse_device(device_source({'n_th': True}))


def test_parse_device_invariantViolation_reportedAsConfigError():
    """Dataclass checks surface as ConfigError with the section line"""
    source = device_source({'readout_efficiency': 1.5})
    with pytest.raises(ConfigError) as error:
        parse_device(source)
    assert error.value.line == source.line_of(('ground_truth',))


def test_parse_device_unknownSection_raisesConfigError():
    """Top level sections are fixed"""
    with pytest.raises(ConfigError, match="Unknown section"):
        parse_device(device_source(pulses={}))


def test_parse_device_negativeSeed_raisesConfigError():
    """Seeds are non-negative integers"""
    with pytest.raises(ConfigError):
        parse_device(device_source(seed=-1))


def test_parse_device_invalidJson_reportsLine():
    """Syntax errors carry the line of the JSON decoder"""
    with pytest.raises(ConfigError) as error:
        parse_device(Source('device.json', '{\n  "ground_truth": {,\n}'))
    assert error.value.line == 2


def test_source_read_missingFile_raisesConfigError(tmp_path):
    """An unreadable path is a configuration problem"""
    with pytest.raises(ConfigError):
        Source.read(str(tmp_path / 'absent.json'))


def test_load_budget_shippedFile_hasAllSections():
    """The packaged budget file populates every budget"""
    budget = load_budget(BUDGET_FILE)
    assert budget.frequency == 5e9
    assert [name for name, _ in budget.chains] == ['20/20 dB', 'reference', 'passthrough']
    assert len(budget.chains[1][1]) == 3
    assert len(budget.amplifier['stages']) == 3
    assert budget.wiring['c_sigma'] == 65e-15
    assert len(budget.dielectric) == 2
    assert budget.dephasing['n_th'] == 1e-3


def test_parse_budget_missingFrequency_raisesConfigError():
    """The evaluation frequency is mandatory"""
    with pytest.raises(ConfigError, match="frequency_hz"):
        parse_budget(Source('budget.json', json.dumps({'chains': []})))


def test_parse_budget_malformedChain_raisesConfigError():
    """A chain needs a name and a stage list only"""
    document = {'frequency_hz': 5e9, 'chains': [{'stages': []}]}
    with pytest.raises(ConfigError):
        parse_budget(Source('budget.json', json.dumps(document)))


def test_parse_budget_invalidStage_raisesConfigError():
    """Negative temperatures fail the stage invariants"""
    document = {'frequency_hz': 5e9, 'chains': [{'name': 'bad', 'stages': [{'temperature_k': -1.}]}]}
    with pytest.raises(ConfigError):
        parse_budget(Source('budget.json', json.dumps(document)))


def test_load_graph_shippedFile_matchesDefaultGraph():
    """The packaged tuneup graph loads against the experiment registry"""
    graph, source = load_graph(GRAPH_FILE, EXPERIMENTS)
    assert len(graph) == 17
    assert source.path == GRAPH_FILE


def test_load_graph_unknownNodeKey_raisesConfigError(tmp_path):
    """Node entries are schema checked before the graph is built"""
    path = tmp_path / 'graph.json'
    path.write_text(json.dumps({'nodes': [{'name': 'a', 'experiment': 'allxy', 'retries': 3}]}))
    with pytest.raises(ConfigError, match="retries"):
        load_graph(str(path), EXPERIMENTS)


def test_load_graph_danglingDependency_raisesGraphError(tmp_path):
    """Structural problems are graph errors"""
    path = tmp_path / 'graph.json'
    path.write_text(json.dumps({'nodes': [{'name': 'a', 'experiment': 'allxy', 'dependencies': ['b']}]}))
    with pytest.raises(GraphError):
        load_graph(str(path), EXPERIMENTS)
