"""
Readout figures of merit.

Given integrated single shots of a qubit prepared in |0> and |1>, this module finds the discrimination threshold, the
assignment matrix Lambda_M = [[P(0|0), P(0|1)], [P(1|0), P(1|1)]] and the fidelity F = 1 - (P(0|1) + P(1|0))/2. The
butterfly protocol (a heralding measurement, the preparation, then two back to back measurements M1 and M2) gives the
QND-ness Q = 1 - (P(|0>_o | |1>_i) + P(|1>_o | |0>_i))/2, the post measurement state probabilities being recovered as
Lambda_M^-1 P(m2, m1 | prep).

From the average readout trajectories it derives the optimal integration weights w(t) = conj(alpha_out,g -
alpha_out,e), the measurement-induced dephasing rate Gamma_phi(t) = (kappa/2)|alpha_g - alpha_e|^2 and its integral
gamma_phi(tau), and compares the SNR of the shots with the ideal SNR^2 = 4 gamma_phi to get the efficiency eta.
"""
import logging
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.special import erfc

from cqedtwin.device import PulseSequence, noise_density
from cqedtwin.errors import CalibrationError, InputError
from cqedtwin.timedomain import gate_length, gate_pulse, readout_pulse

logger = logging.getLogger(__name__)

# Fewest shots per preparation for an SNR estimate
MIN_SHOTS = 100
# Assignment matrices with a smaller determinant are not inverted
MIN_DETERMINANT = 0.1
# Heralding keeps shots at least this many standard deviations on the ground side of the threshold
HERALD_STRINGENCY = 2.
# Tolerance on column sums of an assignment matrix
STOCHASTIC_TOLERANCE = 1e-9

Dephasing = namedtuple('Dephasing', ['t', 'rate', 'gamma'])
DigitizeResult = namedtuple('DigitizeResult', ['threshold', 'outcomes_g', 'outcomes_e'])
ButterflyResult = namedtuple('ButterflyResult', ['fidelity', 'qndness', 'assignment', 'post_probabilities',
                                                 'clipped', 'n_kept', 'transitions'])


class Threshold(namedtuple('Threshold', ['center', 'axis', 'value', 'sigma', 'method'])):
    """
    A straight decision boundary in the IQ plane.

    Vars:
        center (complex): Mean of the ground state cloud
        axis (complex): Unit vector from the ground to the excited cloud
        value (float): Boundary position along the axis, measured from center
        sigma (float): Pooled standard deviation per quadrature
        method (str): 'midpoint' or 'ml'
    """
    __slots__ = ()

    def project(self, shots):
        return np.real((np.asarray(shots, dtype=complex) - self.center) * np.conj(self.axis))

    def digitize(self, shots):
        return (self.project(shots) > self.value).astype(int)


@dataclass(frozen=True)
class AssignmentMatrix:
    """
    Lambda_M, the probability of each outcome (rows) for each prepared state (columns).

    Vars:
        matrix (np.ndarray): 2x2 column stochastic matrix
    """
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.shape != (2, 2):
            raise InputError("An assignment matrix is 2x2")
        if np.any(matrix < -STOCHASTIC_TOLERANCE) or np.any(matrix > 1. + STOCHASTIC_TOLERANCE):
            raise InputError("Assignment probabilities must lie in [0, 1]")
        if not np.allclose(matrix.sum(axis=0), 1., atol=STOCHASTIC_TOLERANCE):
            raise InputError("Assignment matrix columns must sum to one")
        object.__setattr__(self, 'matrix', matrix)

    @classmethod
    def from_outcomes(cls, outcomes_0, outcomes_1):
        """Estimate the matrix from the binary outcomes of shots prepared in |0> and |1>"""
        if len(outcomes_0) == 0 or len(outcomes_1) == 0:
            raise InputError("Both preparations need shots")
        p1_0 = float(np.mean(outcomes_0))
        p1_1 = float(np.mean(outcomes_1))
        return cls(np.array([[1. - p1_0, 1. - p1_1], [p1_0, p1_1]]))

    @property
    def fidelity(self):
        return 1. - 0.5 * (self.matrix[0, 1] + self.matrix[1, 0])

    def inverse(self):
        determinant = np.linalg.det(self.matrix)
        if abs(determinant) < MIN_DETERMINANT:
            raise CalibrationError("Assignment matrix is ill-conditioned, determinant " + str(determinant))
        return np.linalg.inv(self.matrix)


@dataclass
class ReadoutMetrics:
    """
    Figures of merit of a readout. Any field may be left unset by a partial characterisation.

    Vars:
        fidelity (float): F
        qndness (float): Q
        snr (float): Separation of the cloud means over the pooled standard deviation per quadrature
        efficiency (float): eta = SNR^2/(4 gamma_phi)
        efficiency_error (float): One standard deviation of eta
        convention (str): 'standard', or 'rescaled' when eta has been doubled for a phase preserving chain
        t (np.ndarray): Time grid of the curves
        snr_curve (np.ndarray): SNR(tau)
        dephasing_rate (np.ndarray): Gamma_phi(t)
        gamma_phi (np.ndarray): gamma_phi(tau)
        weights (np.ndarray): Integration weights
        clipped (bool): Whether Q was clipped into [0, 1]
    """
    fidelity: float = None
    qndness: float = None
    snr: float = None
    efficiency: float = None
    efficiency_error: float = None
    convention: str = 'standard'
    t: np.ndarray = None
    snr_curve: np.ndarray = None
    dephasing_rate: np.ndarray = None
    gamma_phi: np.ndarray = None
    weights: np.ndarray = None
    clipped: bool = False

    def as_dict(self):
        def listed(array):
            return None if array is None else np.asarray(array).real.tolist()
        weights = None if self.weights is None else [[w.real, w.imag] for w in np.asarray(self.weights)]
        return {'F': self.fidelity, 'Q': self.qndness, 'snr': self.snr, 'eta': self.efficiency,
                'eta_error': self.efficiency_error, 'convention': self.convention, 't': listed(self.t),
                'snr_curve': listed(self.snr_curve), 'gamma_phi': listed(self.gamma_phi), 'weights': weights,
                'clipped': self.clipped}


def _outcomes(shots):
    return np.asarray(getattr(shots, 'outcomes', shots), dtype=complex)


def optimal_weights(avg_g, avg_e, t=None):
    """
    Integration weights matched to the difference of the two average output fields.

    Args:
        avg_g (array_like): Average output field of the ground state
        avg_e (array_like): Average output field of the excited state, on the same grid
        t (array_like): Time grid; the weights get unit energy integral(|w|^2 dt) = 1 on it, unit norm without it

    Returns:
        np.ndarray: w(t) = conj(avg_g - avg_e), normalised, to be used as s = integral(w alpha_out dt)

    Raises:
        InputError: If the grids differ or the two traces are identical
    """
    avg_g = np.asarray(avg_g, dtype=complex)
    avg_e = np.asarray(avg_e, dtype=complex)
    if avg_g.shape != avg_e.shape:
        raise InputError("Average traces must share one grid")
    weights = np.conj(avg_g - avg_e)
    energy = trapezoid(np.abs(weights) ** 2, t) if t is not None else np.sum(np.abs(weights) ** 2)
    if not energy > 0:
        raise InputError("Identical trajectories give no weights")
    return weights / np.sqrt(energy)


def measurement_dephasing(traj_g, traj_e, kappa=None):
    """
    Measurement-induced dephasing of a readout.

    Args:
        traj_g (ReadoutTrajectory): Ground state intracavity field
        traj_e (ReadoutTrajectory): Excited state intracavity field on the same grid
        kappa (float): Resonator decay rate in 1/s; taken from the trajectory when None

    Returns:
        Dephasing: Gamma_phi(t) = (kappa/2)|alpha_g - alpha_e|^2 and gamma_phi(tau) = integral_0^tau Gamma_phi dt
    """
    t = np.asarray(traj_g.t, dtype=float)
    if len(traj_e.t) != len(t):
        raise InputError("Trajectories must share one grid")
    kappa = traj_g.kappa if kappa is None else kappa
    rate = 0.5 * kappa * np.abs(np.asarray(traj_g.alpha) - np.asarray(traj_e.alpha)) ** 2
    return Dephasing(t, rate, cumulative_trapezoid(rate, t, initial=0.))


def snr_curve(traj_g, traj_e, weights=None, eta=1.):
    """
    Ideal SNR(tau) of integrating the output field up to tau.

    SNR(tau) = |integral_0^tau w (alpha_out,g - alpha_out,e) dt| / sqrt(N0 integral_0^tau |w|^2 dt) with the noise
    density N0 of the chain. With the optimal weights SNR^2 = eta 4 gamma_phi.

    Returns:
        np.ndarray: SNR on the trajectory grid, zero at the first point
    """
    t = np.asarray(traj_g.t, dtype=float)
    difference = np.asarray(traj_g.alpha_out) - np.asarray(traj_e.alpha_out)
    weights = np.conj(difference) if weights is None else np.asarray(weights, dtype=complex)
    signal = np.abs(cumulative_trapezoid(weights * difference, t, initial=0.))
    energy = cumulative_trapezoid(np.abs(weights) ** 2, t, initial=0.)
    noise = np.sqrt(noise_density(traj_g, eta) * energy)
    return np.divide(signal, noise, out=np.zeros_like(signal), where=noise > 0)


def pooled_sigma(shots_g, shots_e):
    """Standard deviation per quadrature pooled over both clouds"""
    shots_g = _outcomes(shots_g)
    shots_e = _outcomes(shots_e)
    variance = 0.25 * (np.var(shots_g.real) + np.var(shots_g.imag) + np.var(shots_e.real) + np.var(shots_e.imag))
    return float(np.sqrt(variance))


def snr_and_efficiency(shots_g, shots_e, gamma_phi, rescaled=False):
    """
    Empirical SNR of two labelled shot sets and the measurement efficiency it implies.

    Args:
        shots_g, shots_e (ShotBatch or array_like): Integrated shots of each preparation
        gamma_phi (float): Integrated measurement-induced dephasing over the same window
        rescaled (bool): Report eta doubled, the convention for phase preserving amplifier chains

    Returns:
        ReadoutMetrics: snr, efficiency and efficiency_error filled in

    Raises:
        InputError: With fewer than MIN_SHOTS shots per preparation or a non-positive gamma_phi
    """
    shots_g = _outcomes(shots_g)
    shots_e = _outcomes(shots_e)
    if len(shots_g) < MIN_SHOTS or len(shots_e) < MIN_SHOTS:
        raise InputError("Need at least " + str(MIN_SHOTS) + " shots per preparation")
    if not gamma_phi > 0:
        raise InputError("gamma_phi must be positive")
    n_g, n_e = len(shots_g), len(shots_e)
    separation = abs(shots_g.mean() - shots_e.mean())
    sigma = pooled_sigma(shots_g, shots_e)
    snr = separation / sigma
    efficiency = snr ** 2 / (4. * gamma_phi)

    # Delta method: the mean separation and the pooled variance contribute independently
    relative_separation = np.sqrt(1. / n_g + 1. / n_e) / max(snr, 1e-12)
    relative_sigma = np.sqrt(1. / (4. * (n_g + n_e)))
    efficiency_error = 2. * efficiency * np.hypot(relative_separation, relative_sigma)
    if rescaled:
        efficiency *= 2.
        efficiency_error *= 2.
    return ReadoutMetrics(snr=float(snr), efficiency=float(efficiency), efficiency_error=float(efficiency_error),
                          convention='rescaled' if rescaled else 'standard')


def gaussian_tail_fidelity(snr):
    """Fidelity of a midpoint threshold between two Gaussian clouds at the given SNR"""
    return 1. - 0.5 * erfc(np.asarray(snr) / (2. * np.sqrt(2.)))


def _ml_boundary(mu_g, sigma_g, mu_e, sigma_e):
    """Point between the means where two weighted Gaussian densities cross"""
    a = 0.5 / sigma_e ** 2 - 0.5 / sigma_g ** 2
    b = mu_g / sigma_g ** 2 - mu_e / sigma_e ** 2
    c = 0.5 * mu_e ** 2 / sigma_e ** 2 - 0.5 * mu_g ** 2 / sigma_g ** 2 - np.log(sigma_g / sigma_e)
    if abs(a) < 1e-12 * max(abs(b), 1e-300):
        return -c / b
    roots = np.roots([a, b, c])
    roots = np.real(roots[np.abs(np.imag(roots)) < 1e-9 * max(np.abs(roots).max(), 1.)])
    between = [r for r in roots if min(mu_g, mu_e) <= r <= max(mu_g, mu_e)]
    candidates = between if between else list(roots)
    if not candidates:
        return 0.5 * (mu_g + mu_e)
    return float(min(candidates, key=lambda r: abs(r - 0.5 * (mu_g + mu_e))))


def threshold_digitize(shots_g, shots_e, method='midpoint'):
    """
    Find a threshold between the ground and excited clouds and digitise both.

    Shots are projected on the line joining the two means, which makes the result independent of any global rotation
    or offset of the IQ plane. The default boundary is the midpoint; 'ml' puts it where the two fitted Gaussians
    cross, which moves it towards the narrower cloud when the widths differ.

    Returns:
        DigitizeResult: The Threshold and the binary outcomes of both sets
    """
    shots_g = _outcomes(shots_g)
    shots_e = _outcomes(shots_e)
    if method not in ('midpoint', 'ml'):
        raise InputError("Unknown threshold method " + repr(method))
    mean_g, mean_e = shots_g.mean(), shots_e.mean()
    separation = mean_e - mean_g
    if separation == 0:
        raise InputError("Degenerate clouds: the means coincide")
    axis = separation / abs(separation)
    sigma = pooled_sigma(shots_g, shots_e)
    distance = abs(separation)
    if method == 'midpoint':
        value = 0.5 * distance
    else:
        x_g = np.real((shots_g - mean_g) * np.conj(axis))
        x_e = np.real((shots_e - mean_g) * np.conj(axis))
        value = _ml_boundary(0., max(np.std(x_g), 1e-300), float(np.mean(x_e)), max(np.std(x_e), 1e-300))
    threshold = Threshold(complex(mean_g), complex(axis), float(value), sigma, method)
    return DigitizeResult(threshold, threshold.digitize(shots_g), threshold.digitize(shots_e))


def _herald_mask(herald, threshold, stringency):
    if herald is None:
        return slice(None)
    return threshold.project(_outcomes(herald)) < threshold.value - stringency * threshold.sigma


def assignment_matrix(shots_g, shots_e, threshold, herald_g=None, herald_e=None, stringency=HERALD_STRINGENCY):
    """
    Assignment matrix of a readout, optionally on heralded preparations.

    A heralding measurement taken before the preparation purifies it: only shots that it found at least stringency
    standard deviations on the ground side of the boundary are kept.

    Returns:
        AssignmentMatrix: Lambda_M, whose fidelity property is F

    Raises:
        InputError: If the clouds are degenerate or heralding leaves no shots
    """
    if threshold.sigma == 0 and threshold.value == 0:
        raise InputError("Degenerate threshold")
    shots_g = _outcomes(shots_g)[_herald_mask(herald_g, threshold, stringency)]
    shots_e = _outcomes(shots_e)[_herald_mask(herald_e, threshold, stringency)]
    return AssignmentMatrix.from_outcomes(threshold.digitize(shots_g), threshold.digitize(shots_e))


def butterfly_qndness(m1, m2, assignment=None):
    """
    QND-ness from two consecutive measurements of heralded |0> and |1> preparations.

    The M2 outcomes are split by preparation and M1 outcome, and Lambda_M^-1 applied to each split gives the
    post-measurement transitions P(o | prep, m1). Weighting them by P(m1 | prep) gives the post-state probabilities
    P(o | prep), and Q = 1 - (P(1 | 0) + P(0 | 1)) / 2.

    Args:
        m1 (dict): Binary outcomes of the first measurement, keyed by prepared state 0 and 1
        m2 (dict): Binary outcomes of the second measurement, same shots
        assignment (AssignmentMatrix): Lambda_M; estimated from m1 when None

    Returns:
        ButterflyResult: F, Q, Lambda_M, P(o | prep) as a 2x2 array [o, prep], whether Q was clipped, and
            P(o | prep, m1) as a 2x2x2 array [prep, m1, o], NaN where m1 never occurred

    Raises:
        CalibrationError: If Lambda_M is ill-conditioned
    """
    for prep in (0, 1):
        if len(m1[prep]) != len(m2[prep]) or len(m1[prep]) == 0:
            raise InputError("Each preparation needs matching, non-empty M1 and M2 outcomes")
    if assignment is None:
        assignment = AssignmentMatrix.from_outcomes(m1[0], m1[1])
    inverse = assignment.inverse()

    transitions = np.full((2, 2, 2), np.nan)
    first_rates = np.zeros((2, 2))
    for prep in (0, 1):
        first = np.asarray(m1[prep])
        second = np.asarray(m2[prep])
        for outcome in (0, 1):
            given = second[first == outcome]
            first_rates[prep, outcome] = len(given) / len(first)
            if len(given):
                transitions[prep, outcome] = inverse @ np.array([np.mean(given == 0), np.mean(given == 1)])
    post = np.einsum('pm,pmo->op', first_rates, np.nan_to_num(transitions))
    qndness = 1. - 0.5 * (post[0, 1] + post[1, 0])
    clipped = not 0. <= qndness <= 1.
    if clipped:
        logger.warning("QND-ness %.4f clipped into [0, 1]", qndness)
    return ButterflyResult(assignment.fidelity, float(np.clip(qndness, 0., 1.)), assignment, post, clipped, None,
                           transitions)


def butterfly_sequence(settings, prepare_excited):
    """A heralding readout, an optional pi pulse and two back to back readouts"""
    dt = settings.sample_period
    herald = readout_pulse(settings, 0.)
    cursor = len(herald.envelope)
    channels = [herald]
    if prepare_excited:
        channels.append(gate_pulse('X', settings, start=cursor * dt))
    cursor += settings.samples(gate_length(settings))
    for _ in range(2):
        readout = readout_pulse(settings, cursor * dt)
        channels.append(readout)
        cursor += len(readout.envelope)
    return PulseSequence(dt, channels, drive_frequency=settings.qubit_frequency,
                         readout_frequency=settings.readout_frequency, flux_bias=settings.flux_bias)


def run_butterfly(device, settings, rng, n_shots=10000, stringency=HERALD_STRINGENCY):
    """
    Run the butterfly experiment with heralded preparation.

    Args:
        device: Anything with the execute interface
        settings (ControlSettings): Needs pi pulses, a readout and a threshold
        rng (RngStream): Source of randomness
        n_shots (int): Shots per preparation before heralding
        stringency (float): Heralding margin in standard deviations

    Returns:
        ButterflyResult: With n_kept the number of heralded shots per preparation
    """
    settings.require('threshold', 'pi_amplitude')
    threshold = settings.threshold
    m1, m2, kept = {}, {}, {}
    for prep in (0, 1):
        herald, first, second = device.execute(butterfly_sequence(settings, prep == 1), n_shots, rng.child(prep))
        mask = _herald_mask(herald, threshold, stringency)
        m1[prep] = threshold.digitize(first.outcomes[mask])
        m2[prep] = threshold.digitize(second.outcomes[mask])
        kept[prep] = int(len(m1[prep]))
        if kept[prep] == 0:
            raise CalibrationError("Heralding rejected every shot")
    result = butterfly_qndness(m1, m2)
    logger.info("Butterfly: F = %.4f, Q = %.4f", result.fidelity, result.qndness)
    return result._replace(n_kept=kept)
