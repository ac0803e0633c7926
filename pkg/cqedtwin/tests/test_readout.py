"""
Tests for the readout figures of merit.

Synthetic Gaussian clouds check the thresholds and the assignment matrix against the error function; trajectories
from the device model check the relation between SNR and measurement-induced dephasing.
"""
import numpy as np
import pytest
from hypothesis import given
from hypothesis.strategies import floats
from scipy.integrate import trapezoid

from cqedtwin.device import acquire_shots, readout_trajectory
from cqedtwin.errors import CalibrationError, InputError
from cqedtwin.numerics import RngStream
from cqedtwin.readout import AssignmentMatrix, butterfly_qndness, gaussian_tail_fidelity, measurement_dephasing, \
    optimal_weights, run_butterfly, snr_and_efficiency, snr_curve, threshold_digitize
from cqedtwin.recovery import settings_from_ground_truth
from cqedtwin.simulator import VirtualDevice
from cqedtwin.tests.conftest import healthy_ground_truth
from cqedtwin.timedomain import ControlSettings, gate_sequence

N_SHOTS = 20000
# Statistical tolerance of fidelities estimated from N_SHOTS shots
FIDELITY_TOLERANCE = 0.01
# Relative agreement of the measured demolition 1 - Q with decay during one readout
QND_TOLERANCE = 0.2
EPSILON = 1e-12


def gaussian_clouds(separation, sigma_g=1., sigma_e=1., seed=0, n=N_SHOTS):
    """Oracle shots: two complex Gaussian clouds along the real axis"""
    generator = np.random.default_rng(seed)
    g = sigma_g * (generator.standard_normal(n) + 1j * generator.standard_normal(n))
    e = separation + sigma_e * (generator.standard_normal(n) + 1j * generator.standard_normal(n))
    return g, e


def trajectories(gt, drive=1e3, n=400):
    t = np.linspace(0., n * 1e-9, n + 1)
    return readout_trajectory(0, drive, gt, t), readout_trajectory(1, drive, gt, t)


@given(snr=floats(1., 5.))
def test_threshold_digitize_midpoint_fidelityFollowsErrorFunction(snr):
    """Two equal Gaussian clouds give F = 1 - erfc(SNR/2 sqrt 2)/2"""
    g, e = gaussian_clouds(snr)
    result = threshold_digitize(g, e)
    assignment = AssignmentMatrix.from_outcomes(result.outcomes_g, result.outcomes_e)
    assert assignment.fidelity == pytest.approx(float(gaussian_tail_fidelity(snr)), abs=FIDELITY_TOLERANCE)


@given(angle=floats(-np.pi, np.pi), offset_re=floats(-10., 10.), offset_im=floats(-10., 10.))
def test_threshold_digitize_rotatedPlane_sameOutcomes(angle, offset_re, offset_im):
    """Digitisation does not depend on the orientation or origin of the IQ plane"""
    g, e = gaussian_clouds(2., n=2000)
    shift = complex(offset_re, offset_im)
    rotation = np.exp(1j * angle)
    plain = threshold_digitize(g, e)
    moved = threshold_digitize(g * rotation + shift, e * rotation + shift)
    assert np.mean(plain.outcomes_g != moved.outcomes_g) < 1e-3
    assert np.mean(plain.outcomes_e != moved.outcomes_e) < 1e-3


def test_threshold_digitize_mlUnequalWidths_movesTowardNarrowCloud():
    """The maximum likelihood boundary sits closer to the narrower cloud"""
    g, e = gaussian_clouds(4., sigma_g=0.5, sigma_e=1.5)
    result = threshold_digitize(g, e, method='ml')
    assert result.threshold.value < 2.


def test_threshold_digitize_unknownMethod_raisesInputError():
    """Only midpoint and maximum likelihood boundaries exist"""
    g, e = gaussian_clouds(2., n=100)
    with pytest.raises(InputError):
        threshold_digitize(g, e, method='svm')


def test_assignment_matrix_columnsNotStochastic_raisesInputError():
    """Every column of Lambda_M sums to one"""
    with pytest.raises(InputError):
        AssignmentMatrix(np.array([[0.9, 0.2], [0.2, 0.8]]))


def test_assignment_matrix_random_inverseRaisesCalibrationError():
    """A readout that assigns at random cannot be inverted"""
    with pytest.raises(CalibrationError):
        AssignmentMatrix(np.array([[0.5, 0.5], [0.5, 0.5]])).inverse()


def test_butterfly_qndness_perfectReadout_unitFidelityAndQndness():
    """Noiseless, non-demolishing measurements give F = Q = 1"""
    m = {0: np.zeros(100, dtype=int), 1: np.ones(100, dtype=int)}
    result = butterfly_qndness(m, m)
    assert result.fidelity == 1.
    assert result.qndness == 1.
    assert not result.clipped


def test_butterfly_qndness_halfDemolished_qndnessThreeQuarters():
    """Half the excited shots decaying between M1 and M2 costs a quarter of Q"""
    m1 = {0: np.zeros(100, dtype=int), 1: np.ones(100, dtype=int)}
    m2 = {0: np.zeros(100, dtype=int), 1: np.r_[np.zeros(50, dtype=int), np.ones(50, dtype=int)]}
    assert butterfly_qndness(m1, m2).qndness == pytest.approx(0.75)


def test_butterfly_qndness_mismatchedOutcomes_raisesInputError():
    """M1 and M2 must come from the same shots"""
    with pytest.raises(InputError):
        butterfly_qndness({0: [0, 0], 1: [1]}, {0: [0], 1: [1]})


def test_butterfly_qndness_halfDemolished_transitionsConditionedOnFirstOutcome():
    """Shots read as excited by M1 split evenly on M2; shots read as ground stay there"""
    m1 = {0: np.zeros(100, dtype=int), 1: np.ones(100, dtype=int)}
    m2 = {0: np.zeros(100, dtype=int), 1: np.r_[np.zeros(50, dtype=int), np.ones(50, dtype=int)]}
    transitions = butterfly_qndness(m1, m2).transitions
    assert transitions.shape == (2, 2, 2)
    assert np.allclose(transitions[0, 0], [1., 0.], atol=EPSILON)
    assert np.allclose(transitions[1, 1], [0.5, 0.5], atol=EPSILON)
    # M1 never read 1 after preparing 0, nor 0 after preparing 1
    assert np.isnan(transitions[0, 1]).all()
    assert np.isnan(transitions[1, 0]).all()


def test_butterfly_qndness_postProbabilities_weightTransitionsByFirstOutcome():
    """P(o | prep) is the average of P(o | prep, m1) over the M1 outcomes"""
    generator = np.random.default_rng(5)
    m1 = {0: (generator.random(2000) < 0.05).astype(int), 1: (generator.random(2000) < 0.9).astype(int)}
    m2 = {prep: np.where(generator.random(2000) < 0.95, m1[prep], 1 - m1[prep]) for prep in (0, 1)}
    result = butterfly_qndness(m1, m2)
    for prep in (0, 1):
        weights = np.array([np.mean(m1[prep] == 0), np.mean(m1[prep] == 1)])
        assert np.allclose(result.post_probabilities[:, prep], weights @ result.transitions[prep], atol=EPSILON)
    assert result.qndness == pytest.approx(
        1. - 0.5 * (result.post_probabilities[0, 1] + result.post_probabilities[1, 0]))


def test_optimal_weights_grid_unitEnergy():
    """The weights are normalised on the time grid"""
    gt = healthy_ground_truth()
    traj_g, traj_e = trajectories(gt)
    weights = optimal_weights(traj_g.alpha_out, traj_e.alpha_out, traj_g.t)
    assert trapezoid(np.abs(weights) ** 2, traj_g.t) == pytest.approx(1.)


def test_optimal_weights_identicalTraces_raisesInputError():
    """Identical trajectories carry no information"""
    with pytest.raises(InputError):
        optimal_weights(np.ones(10), np.ones(10))


@given(eta=floats(0.1, 1.))
def test_snr_curve_optimalWeights_squaredEqualsFourEtaGamma(eta):
    """With matched weights SNR^2 = 4 eta gamma_phi at every integration time"""
    gt = healthy_ground_truth()
    traj_g, traj_e = trajectories(gt)
    snr = snr_curve(traj_g, traj_e, eta=eta)
    gamma = measurement_dephasing(traj_g, traj_e).gamma
    assert np.allclose(snr ** 2, 4. * eta * gamma, rtol=1e-9, atol=1e-12)


def test_snr_and_efficiency_simulatedShots_recoversEta():
    """The shot SNR and the dephasing integral give back the efficiency of the chain"""
    gt = healthy_ground_truth()
    traj_g, traj_e = trajectories(gt)
    weights = optimal_weights(traj_g.alpha_out, traj_e.alpha_out, traj_g.t)
    shots_g = acquire_shots(traj_g, traj_e, 0, weights, 5000, 0.5, RngStream(1))
    shots_e = acquire_shots(traj_g, traj_e, 1, weights, 5000, 0.5, RngStream(2))
    gamma = measurement_dephasing(traj_g, traj_e).gamma[-1]
    metrics = snr_and_efficiency(shots_g, shots_e, gamma)
    assert metrics.efficiency == pytest.approx(0.5, abs=3 * metrics.efficiency_error)
    assert snr_and_efficiency(shots_g, shots_e, gamma, rescaled=True).efficiency == pytest.approx(
        2 * metrics.efficiency)


def test_snr_and_efficiency_fewShots_raisesInputError():
    """An SNR needs at least a hundred shots per preparation"""
    g, e = gaussian_clouds(2., n=50)
    with pytest.raises(InputError):
        snr_and_efficiency(g, e, 1.)


def test_run_butterfly_device_highFidelityAndQndness(device, calibrated):
    """A well calibrated dispersive readout is faithful and close to QND"""
    batches = device.execute_many([gate_sequence(calibrated, []), gate_sequence(calibrated, ['X'])], 2000,
                                  RngStream(11))
    threshold = threshold_digitize(batches[0][0], batches[1][0]).threshold
    result = run_butterfly(device, calibrated.updated(threshold=threshold), RngStream(12), n_shots=2000)
    assert result.fidelity > 0.9
    assert result.qndness > 0.9
    assert min(result.n_kept.values()) > 1000


def test_run_butterfly_t1TenReadouts_qndnessMatchesDecayDuringReadout():
    """Excited shots decaying during one readout of length tau lose Q = tau/(2 T1) on average"""
    tau = ControlSettings().readout_duration
    gt = healthy_ground_truth(t1=10 * tau)
    device = VirtualDevice(gt)
    calibrated = settings_from_ground_truth(gt, device, RngStream(7), n_shots=500)
    batches = device.execute_many([gate_sequence(calibrated, []), gate_sequence(calibrated, ['X'])], 4000,
                                  RngStream(13))
    threshold = threshold_digitize(batches[0][0], batches[1][0]).threshold
    result = run_butterfly(device, calibrated.updated(threshold=threshold), RngStream(14), n_shots=10000)
    demolition = tau / (2 * gt.t1)
    assert 1. - result.qndness == pytest.approx(demolition, rel=QND_TOLERANCE)
