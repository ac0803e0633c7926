"""
Tests for the calibration graph and its executor, using toy experiments whose outcome is known in advance.
"""
import json
import os

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis.strategies import integers

from cqedtwin.calibration import FAIL, PASS, SKIPPED, CalibGraph, CalibNode, DeviceRecord, NodeResult, dumps, \
    report_document, report_passed, run_tuneup_graph, stream_id, write_dataset
from cqedtwin.errors import FitError, GraphError, InputError
from cqedtwin.timedomain import ControlSettings


def draws(device, settings, rng, name='draw'):
    """A node estimating one random number from its stream"""
    return NodeResult({name: (float(rng.generator().random()), 0.1)},
                      datasets={'samples': pd.DataFrame({'x': [1., 2.], 'y': [3., 4.]})})


def sets_qubit(device, settings, rng, frequency=5e9):
    return NodeResult({'qubit_frequency': (frequency, 1e3)}, {'qubit_frequency': frequency})


def reads_qubit(device, settings, rng):
    """Sees the settings of the previous generation"""
    settings.require('qubit_frequency')
    return NodeResult({'seen': (settings.qubit_frequency, 0.)})


def fails(device, settings, rng):
    raise FitError("no peak")


REGISTRY = {'draws': draws, 'sets_qubit': sets_qubit, 'reads_qubit': reads_qubit, 'fails': fails}


def chain(*specs):
    """Graph from (name, experiment, dependencies) triples"""
    return CalibGraph([CalibNode(name, deps, REGISTRY[experiment]) for name, experiment, deps in specs])


def test_calib_node_unknownBound_raisesInputError():
    """Acceptance bounds are min and max only"""
    with pytest.raises(InputError):
        CalibNode('t1', acceptance={'t1': {'above': 1e-6}})


def test_calib_graph_cycle_raisesGraphError():
    """A cyclic graph has no execution order"""
    graph = chain(('a', 'draws', ('c',)), ('b', 'draws', ('a',)), ('c', 'draws', ('b',)))
    with pytest.raises(GraphError):
        graph.validate()


def test_calib_graph_danglingDependency_raisesGraphError():
    """Every dependency must be a node"""
    graph = chain(('a', 'draws', ('missing',)))
    with pytest.raises(GraphError):
        graph.validate()


def test_calib_graph_duplicateName_raisesGraphError():
    """Node names are unique"""
    with pytest.raises(GraphError):
        chain(('a', 'draws', ()), ('a', 'fails', ()))


def test_calib_graph_fromDictUnknownExperiment_raisesGraphError():
    """Graph files may only name registered experiments"""
    with pytest.raises(GraphError):
        CalibGraph.from_dict({'nodes': [{'name': 'a', 'experiment': 'wigner'}]}, REGISTRY)


def test_calib_graph_generations_sortedByDependencyThenName():
    """Generations follow the dependencies and are sorted within"""
    graph = chain(('z', 'draws', ()), ('a', 'draws', ()), ('m', 'draws', ('z', 'a')))
    assert graph.generations() == [['a', 'z'], ['m']]


def test_run_tuneup_graph_failedNode_descendantsSkipped():
    """A failure skips everything downstream and leaves independent branches alone"""
    graph = chain(('broken', 'fails', ()), ('child', 'draws', ('broken',)), ('grandchild', 'draws', ('child',)),
                  ('other', 'draws', ()))
    report = run_tuneup_graph(graph, None, ControlSettings())
    assert report.nodes['broken']['state'] == FAIL
    assert 'FitError' in report.nodes['broken']['message']
    assert report.nodes['child']['state'] == SKIPPED
    assert report.nodes['grandchild']['state'] == SKIPPED
    assert report.nodes['other']['state'] == PASS
    assert not report_passed(graph, report)


def test_run_tuneup_graph_rejectedEstimate_failsAndKeepsRecordClean():
    """An estimate outside its bounds fails the node and is not recorded"""
    graph = CalibGraph([CalibNode('qubit', (), sets_qubit, {'qubit_frequency': {'max': 4e9}})])
    report = run_tuneup_graph(graph, None, ControlSettings())
    assert report.nodes['qubit']['state'] == FAIL
    assert 'above' in report.nodes['qubit']['message']
    assert 'qubit_frequency' not in report.record
    assert report.settings.qubit_frequency is None


def test_run_tuneup_graph_updates_visibleToNextGeneration():
    """Settings updates are applied between generations"""
    graph = chain(('qubit', 'sets_qubit', ()), ('reader', 'reads_qubit', ('qubit',)))
    report = run_tuneup_graph(graph, None, ControlSettings())
    assert report.record.value('seen') == 5e9
    assert report.settings.qubit_frequency == 5e9
    assert report.record['seen'].node == 'reader'


def test_run_tuneup_graph_optionalFailure_stillPasses():
    """Optional nodes do not decide the outcome"""
    graph = CalibGraph([CalibNode('extra', (), fails, optional=True), CalibNode('main', (), draws)])
    assert report_passed(graph, run_tuneup_graph(graph, None, ControlSettings()))


@given(seed=integers(0, 2 ** 32))
def test_run_tuneup_graph_threadedAndSerial_identicalRecords(seed):
    """Concurrency inside a generation does not change the record"""
    specs = [(name, 'draws', ()) for name in 'abcdef']
    serial = run_tuneup_graph(chain(*specs), None, ControlSettings(), seed=seed)
    threaded = run_tuneup_graph(chain(*specs), None, ControlSettings(), seed=seed, processes=3)
    assert dumps(serial.record.as_dict()) == dumps(threaded.record.as_dict())


def test_run_tuneup_graph_differentNodes_independentStreams():
    """Nodes draw from their own streams"""
    graph = CalibGraph([CalibNode('a', (), draws, params={'name': 'a'}), CalibNode('b', (), draws,
                                                                                  params={'name': 'b'})])
    record = run_tuneup_graph(graph, None, ControlSettings(), seed=5).record
    assert record.value('a') != record.value('b')


def test_run_tuneup_graph_outDir_writesRawDatasets(tmp_path):
    """Datasets land under raw/ with metadata ahead of the header"""
    graph = chain(('a', 'draws', ()))
    report = run_tuneup_graph(graph, None, ControlSettings(), seed=3, out_dir=str(tmp_path))
    assert report.files == [os.path.join('raw', 'a_samples.csv')]
    with open(os.path.join(str(tmp_path), 'raw', 'a_samples.csv')) as handle:
        lines = handle.read().splitlines()
    assert lines[0].startswith('# dataset: ')
    assert '# seed: 3' in lines
    assert lines[-3:] == ['x,y', '1.0,3.0', '2.0,4.0']


def test_report_document_roundTripsThroughJson():
    """The report document is plain JSON with the record and node states"""
    graph = chain(('qubit', 'sets_qubit', ()))
    document = json.loads(dumps(report_document(run_tuneup_graph(graph, None, ControlSettings(), seed=1))))
    assert document['device_record']['qubit_frequency']['value'] == 5e9
    assert document['nodes']['qubit']['state'] == PASS
    assert document['seed'] == 1


def test_device_record_fromDict_restoresEntries():
    """A record survives its dictionary form"""
    record = DeviceRecord()
    record.set('t1', 5e-5, 1e-6, 't1', 3)
    assert DeviceRecord.from_dict(record.as_dict()).as_dict() == record.as_dict()


def test_dumps_nonFiniteAndComplex_plainJson():
    """Infinities become strings and complex numbers pairs, keys are sorted"""
    text = dumps({'b': np.inf, 'a': 1 + 2j})
    assert json.loads(text) == {'a': [1., 2.], 'b': 'inf'}
    assert text.index('"a"') < text.index('"b"')


def test_stream_id_stableAndDistinct():
    """Node names map to fixed, distinct streams"""
    assert stream_id('rabi') == stream_id('rabi')
    assert stream_id('rabi') != stream_id('t1')
    assert 0 <= stream_id('rabi') < 2 ** 64


def test_write_dataset_metadataSorted(tmp_path):
    """Metadata lines are sorted by key"""
    path = os.path.join(str(tmp_path), 'data.csv')
    write_dataset(path, pd.DataFrame({'x': [1]}), {'z': 1, 'a': 'text'})
    with open(path) as handle:
        assert handle.read().splitlines()[:2] == ['# a: "text"', '# z: 1']
