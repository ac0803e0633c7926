"""
Shared test configuration.

Property tests run under a derandomized hypothesis profile so that every run of the suite draws the same examples.
Simulation-backed properties are slow, so the example count is kept modest.
"""
import pytest
from hypothesis import HealthCheck, settings

from cqedtwin.device import GroundTruth
from cqedtwin.numerics import RngStream
from cqedtwin.simulator import VirtualDevice

settings.register_profile('cqedtwin', derandomize=True, max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile('cqedtwin')


def healthy_ground_truth(**changes):
    """A fixed frequency device well inside the dispersive regime"""
    values = dict(qubit_frequency=5.5e9, anharmonicity=250e6, t1=50e-6, t_phi=80e-6, resonator_frequency=7.2e9,
                  g=70e6, kappa_c=2 * 3.141592653589793 * 1e6, kappa_i=2 * 3.141592653589793 * 20e3,
                  readout_efficiency=0.5, n_th=0.)
    values.update(changes)
    return GroundTruth(**values)


@pytest.fixture
def ground_truth():
    return healthy_ground_truth()


@pytest.fixture
def device(ground_truth):
    return VirtualDevice(ground_truth)


@pytest.fixture
def rng():
    return RngStream(2024)


@pytest.fixture
def calibrated(ground_truth, device):
    """Settings of a perfectly calibrated experimenter"""
    from cqedtwin.recovery import settings_from_ground_truth
    return settings_from_ground_truth(ground_truth, device, RngStream(7), n_shots=500)
