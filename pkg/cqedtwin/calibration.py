"""
The calibration graph and its executor.

A tuneup is a directed acyclic graph of calibration nodes. Each node wraps one experiment: it is handed the device,
the current ControlSettings and its own random stream, and returns a NodeResult holding its estimates (value and
uncertainty), the settings it wants changed, the raw datasets it took and any flags. A node passes when the
experiment ran and every estimate named in its acceptance table lies within bounds; a node whose dependencies did not
all pass is skipped, and so are its descendants.

The executor walks the graph one topological generation at a time. Nodes of a generation may run concurrently in a
thread pool, but settings updates and DeviceRecord entries are applied afterwards, serially and in node name order,
so the outcome does not depend on scheduling. Every node draws from RngStream(seed, id) with an id derived from its
name, so a rerun with the same seed reproduces the record exactly.
"""
import hashlib
import json
import logging
import os
from collections import namedtuple
from dataclasses import dataclass, field
from multiprocessing.pool import ThreadPool

import networkx as nx
import numpy as np

from cqedtwin import __version__
from cqedtwin.errors import CalibrationError, FitError, GraphError, InputError, IntegrationError
from cqedtwin.numerics import RngStream

logger = logging.getLogger(__name__)

UNKNOWN = 'unknown'
PASS = 'pass'
FAIL = 'fail'
SKIPPED = 'skipped'
NODE_STATES = (UNKNOWN, PASS, FAIL, SKIPPED)

# Exceptions that fail a node rather than the whole run
NODE_FAILURES = (FitError, CalibrationError, InputError, IntegrationError)

TuneupReport = namedtuple('TuneupReport', ['record', 'nodes', 'settings', 'seed', 'files'])


@dataclass
class NodeResult:
    """
    What one calibration experiment produced.

    Vars:
        estimates (dict): Estimated quantities as name: (value, uncertainty)
        updates (dict): ControlSettings fields to change
        datasets (dict): Raw data as name: pandas.DataFrame
        fits (dict): FitResults by name
        flags (tuple): Warnings raised by the experiment
    """
    estimates: dict = field(default_factory=dict)
    updates: dict = field(default_factory=dict)
    datasets: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    flags: tuple = ()


@dataclass
class CalibNode:
    """
    One node of a calibration graph.

    Vars:
        name (str): Unique name
        dependencies (tuple): Names of the nodes that must pass first
        experiment (callable): f(device, settings, rng, **params) returning a NodeResult
        acceptance (dict): Bounds on estimates, as name: {'min': value, 'max': value}
        params (dict): Keyword arguments for the experiment
        optional (bool): Whether a failure of this node still lets the tuneup succeed
        state (str): One of NODE_STATES
        outputs (dict): The estimates of the last run
    """
    name: str
    dependencies: tuple = ()
    experiment: object = None
    acceptance: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    optional: bool = False
    state: str = UNKNOWN
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dependencies = tuple(self.dependencies)
        if self.state not in NODE_STATES:
            raise InputError("Unknown node state " + repr(self.state))
        for estimate, bounds in self.acceptance.items():
            unknown = set(bounds) - {'min', 'max'}
            if unknown:
                raise InputError("Acceptance of " + estimate + " has unknown bounds " + ", ".join(sorted(unknown)))

    def rejections(self, result):
        """Reasons the result fails the acceptance table; empty when it passes"""
        reasons = []
        for estimate, bounds in sorted(self.acceptance.items()):
            if estimate not in result.estimates:
                reasons.append(estimate + " was not estimated")
                continue
            value = result.estimates[estimate][0]
            if 'min' in bounds and not value >= bounds['min']:
                reasons.append(estimate + " = " + str(value) + " is below " + str(bounds['min']))
            if 'max' in bounds and not value <= bounds['max']:
                reasons.append(estimate + " = " + str(value) + " is above " + str(bounds['max']))
        return reasons


class CalibGraph(object):
    """
    A dependency graph of CalibNodes, stored as a networkx DiGraph with an edge from each dependency to its dependent.
    """

    def __init__(self, nodes=()):
        self.graph = nx.DiGraph()
        for node in nodes:
            self.add_node(node)

    def add_node(self, node):
        if node.name in self.graph and self.graph.nodes[node.name].get('node') is not None:
            raise GraphError("Duplicate node " + repr(node.name))
        self.graph.add_node(node.name, node=node)
        for dependency in node.dependencies:
            self.graph.add_edge(dependency, node.name)

    def __getitem__(self, name):
        return self.graph.nodes[name]['node']

    def __contains__(self, name):
        return name in self.graph and self.graph.nodes[name].get('node') is not None

    def __iter__(self):
        return iter(self.graph.nodes[name]['node'] for name in self.order())

    def __len__(self):
        return self.graph.number_of_nodes()

    def validate(self):
        """
        Raises:
            GraphError: If a dependency names no node or the graph has a cycle
        """
        for name in sorted(self.graph.nodes):
            if self.graph.nodes[name].get('node') is None:
                dependents = sorted(self.graph.successors(name))
                raise GraphError("Node(s) " + ", ".join(dependents) + " depend on undefined node " + repr(name))
        if not nx.is_directed_acyclic_graph(self.graph):
            cycle = nx.find_cycle(self.graph)
            raise GraphError("Calibration graph has a cycle: " + " -> ".join(edge[0] for edge in cycle)
                             + " -> " + cycle[0][0])

    def generations(self):
        """Nodes grouped so that each group depends only on earlier groups, names sorted within a group"""
        self.validate()
        return [sorted(generation) for generation in nx.topological_generations(self.graph)]

    def order(self):
        return [name for generation in self.generations() for name in generation]

    def descendants(self, name):
        return nx.descendants(self.graph, name)

    def reset(self):
        for node in self:
            node.state = UNKNOWN
            node.outputs = {}

    @classmethod
    def from_dict(cls, document, registry):
        """
        Build a graph from its JSON form.

        Args:
            document (dict): {'nodes': [{'name', 'experiment', 'dependencies', 'acceptance', 'params', 'optional'}]}
            registry (dict): Experiment callables by name

        Raises:
            GraphError: On an unknown experiment, a dangling dependency or a cycle
        """
        graph = cls()
        for entry in document.get('nodes', []):
            experiment = entry.get('experiment', entry['name'])
            if experiment not in registry:
                raise GraphError("Node " + repr(entry['name']) + " uses unknown experiment " + repr(experiment))
            graph.add_node(CalibNode(entry['name'], tuple(entry.get('dependencies', ())), registry[experiment],
                                     dict(entry.get('acceptance', {})), dict(entry.get('params', {})),
                                     bool(entry.get('optional', False))))
        graph.validate()
        return graph


@dataclass(frozen=True)
class RecordEntry:
    """
    One estimated device parameter.

    Vars:
        value (float): The estimate
        uncertainty (float): One standard deviation
        node (str): The node that produced it
        timestamp (int): Index of the step of the run that produced it
    """
    value: object
    uncertainty: float
    node: str
    timestamp: int


class DeviceRecord(object):
    """The ledger of everything a tuneup estimated, with provenance"""

    def __init__(self):
        self.entries = {}

    def set(self, name, value, uncertainty, node, timestamp):
        self.entries[name] = RecordEntry(_jsonable(value), _jsonable(uncertainty), node, int(timestamp))

    def __getitem__(self, name):
        return self.entries[name]

    def __contains__(self, name):
        return name in self.entries

    def value(self, name):
        return self.entries[name].value

    def as_dict(self):
        return {name: {'value': entry.value, 'uncertainty': entry.uncertainty, 'node': entry.node,
                       'timestamp': entry.timestamp}
                for name, entry in sorted(self.entries.items())}

    def to_json(self, path):
        with open(path, 'w') as handle:
            handle.write(dumps(self.as_dict()))

    @classmethod
    def from_dict(cls, document):
        record = cls()
        for name, entry in document.items():
            record.set(name, entry['value'], entry['uncertainty'], entry['node'], entry['timestamp'])
        return record


def _jsonable(value):
    """Plain Python numbers, lists and dicts for JSON; complex numbers become [re, im]"""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (complex, np.complexfloating)):
        return [float(value.real), float(value.imag)]
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else str(value)
    return value


def dumps(document):
    """Canonical JSON: sorted keys and fixed indentation, so equal documents give equal bytes"""
    return json.dumps(_jsonable(document), sort_keys=True, indent=2) + '\n'


def stream_id(name):
    """A stable random stream id for a node name"""
    return int(hashlib.sha256(name.encode('utf-8')).hexdigest()[:15], 16)


def write_dataset(path, frame, metadata):
    """A CSV file with '#'-prefixed metadata lines ahead of the header row"""
    with open(path, 'w', newline='') as handle:
        for key, value in sorted(metadata.items()):
            handle.write('# ' + str(key) + ': ' + json.dumps(_jsonable(value), sort_keys=True) + '\n')
        frame.to_csv(handle, index=False, lineterminator='\n')


def _run_node(node, device, settings, seed):
    """Run one node, catching the failures that only concern it"""
    try:
        result = node.experiment(device, settings, RngStream(seed, stream_id(node.name)), **node.params)
    except NODE_FAILURES as error:
        return None, type(error).__name__ + ': ' + str(error)
    return result, None


def run_tuneup_graph(graph, device, settings, seed=0, processes=1, out_dir=None):
    """
    Execute a calibration graph against a device.

    Args:
        graph (CalibGraph): The graph; node states are reset first
        device: Anything with the execute interface
        settings (ControlSettings): Starting settings, holding the design guesses
        seed (int): Seed of every node's random stream
        processes (int): Threads used for the nodes of one generation
        out_dir (str): Directory for raw datasets, written under out_dir/raw; nothing is written when None

    Returns:
        TuneupReport: The DeviceRecord, a per node report, the final settings, the seed and the dataset files

    Raises:
        GraphError: If the graph has a cycle or a dangling dependency
    """
    graph.validate()
    graph.reset()
    record = DeviceRecord()
    nodes = {}
    files = []
    raw_dir = None
    if out_dir is not None:
        raw_dir = os.path.join(out_dir, 'raw')
        os.makedirs(raw_dir, exist_ok=True)
    step = 0

    for generation in graph.generations():
        ready = []
        for name in generation:
            node = graph[name]
            blocked = [dep for dep in node.dependencies if graph[dep].state != PASS]
            if blocked:
                node.state = SKIPPED
                nodes[name] = {'state': SKIPPED, 'message': 'blocked by ' + ', '.join(sorted(blocked)),
                               'estimates': {}, 'flags': [], 'files': []}
                logger.info("Skipping %s: blocked by %s", name, ', '.join(sorted(blocked)))
            else:
                ready.append(node)
        if not ready:
            continue

        for node in ready:
            logger.info("Running %s", node.name)
        if processes > 1 and len(ready) > 1:
            with ThreadPool(min(processes, len(ready))) as pool:
                outcomes = pool.starmap(_run_node, [(node, device, settings, seed) for node in ready])
        else:
            outcomes = [_run_node(node, device, settings, seed) for node in ready]

        # A single writer applies the generation's results in name order
        updates = {}
        for node, (result, error) in zip(ready, outcomes):
            step += 1
            report = {'state': FAIL, 'message': error, 'estimates': {}, 'flags': [], 'files': []}
            if result is not None:
                reasons = node.rejections(result)
                report['estimates'] = {k: list(v) for k, v in sorted(result.estimates.items())}
                report['flags'] = list(result.flags)
                node.outputs = dict(result.estimates)
                if reasons:
                    report['message'] = '; '.join(reasons)
                else:
                    report['state'] = PASS
                    report['message'] = None
                    updates.update(result.updates)
                    for estimate, (value, uncertainty) in sorted(result.estimates.items()):
                        record.set(estimate, value, uncertainty, node.name, step)
                if raw_dir is not None:
                    for dataset, frame in sorted(result.datasets.items()):
                        filename = node.name + '_' + dataset + '.csv'
                        write_dataset(os.path.join(raw_dir, filename), frame,
                                      {'node': node.name, 'dataset': dataset, 'seed': seed,
                                       'stream': stream_id(node.name), 'version': __version__})
                        report['files'].append(os.path.join('raw', filename))
                        files.append(os.path.join('raw', filename))
            node.state = report['state']
            nodes[node.name] = report
            if node.state == PASS:
                logger.info("%s passed", node.name)
            else:
                logger.warning("%s failed: %s", node.name, report['message'])
        if updates:
            settings = settings.updated(**updates)

    return TuneupReport(record, nodes, settings, seed, files)


def report_passed(graph, report):
    """Whether every non optional node passed"""
    return all(report.nodes[node.name]['state'] == PASS for node in graph if not node.optional)


def report_document(report, inputs=None):
    """The JSON form of a TuneupReport"""
    return {'version': __version__, 'seed': report.seed, 'inputs': inputs or {},
            'device_record': report.record.as_dict(), 'nodes': report.nodes, 'files': sorted(report.files),
            'settings': report.settings.as_dict()}
