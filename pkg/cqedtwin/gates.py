"""
Gate level characterisation in the Pauli transfer matrix picture.

A channel on n qubits is represented by its Pauli transfer matrix R_ij = (1/d) Tr(P_i L(P_j)), a real 4^n x 4^n matrix
acting on the Pauli expansion of a density matrix, v_i = Tr(P_i rho)/sqrt(d). Composition is a matrix product and the
average fidelity to a target follows from a single trace. On top of this the module simulates single qubit Clifford
randomized benchmarking (reference and interleaved), estimates the residual ZZ between two coupled transmons both from
their Hamiltonian and from a closed loop echo on the virtual device, and evaluates the quantum volume metric.
"""
import itertools
import json
import logging
import os
from collections import namedtuple
from dataclasses import dataclass
from functools import partial
from multiprocessing import Pool

import numpy as np
import scipy.linalg

from cqedtwin.device import two_transmon_spectrum
from cqedtwin.errors import CalibrationError, FitError, InputError
from cqedtwin.numerics import RngStream, least_squares_fit
from cqedtwin.simulator import SweepSpec

logger = logging.getLogger(__name__)

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data')
CLIFFORD_TABLES = {'xy': 'clifford_xy.json', 'hadamard': 'clifford_hadamard.json'}

# Tolerance on U U^dag - I for a matrix to count as unitary
UNITARY_TOLERANCE = 1e-10
# Smallest |det R| of a fidelity target
MIN_TARGET_DETERMINANT = 1e-12
# Survival probabilities this close to one everywhere are treated as noiseless
NOISELESS_TOLERANCE = 1e-12

# Default RB sequence lengths and randomisations
RB_LENGTHS = (1, 2, 4, 8, 16, 32, 64, 128, 256)
RB_RANDOMIZATIONS = 50

# Default delay grid of the ZZ echo
ZZ_SPAN = 150e-6
ZZ_POINTS = 151
# Zero padding factor of the FFT that seeds the oscillation fit
ZZ_FFT_PADDING = 16
# A fitted frequency counts as resolved when it exceeds this many standard errors
ZZ_SIGNIFICANCE = 2.

PAULIS = (np.eye(2, dtype=complex),
          np.array([[0, 1], [1, 0]], dtype=complex),
          np.array([[0, -1j], [1j, 0]], dtype=complex),
          np.array([[1, 0], [0, -1]], dtype=complex))


def rotation(axis, angle):
    """exp(-i angle sigma/2) about the Pauli axis 1 (x), 2 (y) or 3 (z)"""
    return scipy.linalg.expm(-0.5j * angle * PAULIS[axis])


PRIMITIVES = {
    'I': PAULIS[0],
    'X': rotation(1, np.pi),
    'Y': rotation(2, np.pi),
    'x': rotation(1, np.pi / 2),
    'y': rotation(2, np.pi / 2),
    '-x': rotation(1, -np.pi / 2),
    '-y': rotation(2, -np.pi / 2),
    'H': np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2),
    'S': np.diag([1, 1j]),
}


def pauli_set(n_qubits):
    """The 4^n Pauli strings, first qubit most significant"""
    strings = []
    for labels in itertools.product(range(4), repeat=n_qubits):
        operator = np.eye(1, dtype=complex)
        for label in labels:
            operator = np.kron(operator, PAULIS[label])
        strings.append(operator)
    return strings


@dataclass(frozen=True)
class PTM:
    """
    A Pauli transfer matrix.

    Vars:
        R (np.ndarray): Real 4^n x 4^n matrix
        n_qubits (int): Number of qubits the channel acts on
    """
    R: np.ndarray
    n_qubits: int = 1

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        size = 4 ** self.n_qubits
        if R.shape != (size, size):
            raise InputError("A " + str(self.n_qubits) + " qubit PTM must be " + str(size) + "x" + str(size) +
                             ", got " + str(R.shape))
        object.__setattr__(self, 'R', R)

    @property
    def dimension(self):
        return 2 ** self.n_qubits

    @property
    def trace_preserving(self):
        first_row = np.zeros(len(self.R))
        first_row[0] = 1.
        return bool(np.allclose(self.R[0], first_row, atol=1e-12))

    def __matmul__(self, other):
        return ptm_compose(self, other)

    def as_dict(self):
        return {'n_qubits': self.n_qubits, 'R': self.R.tolist()}

    @classmethod
    def from_dict(cls, document):
        return cls(np.array(document['R'], dtype=float), int(document['n_qubits']))


def superket(rho):
    """Pauli expansion v_i = Tr(P_i rho)/sqrt(d) of a density matrix"""
    rho = np.asarray(rho, dtype=complex)
    d = len(rho)
    n_qubits = int(round(np.log2(d)))
    if 2 ** n_qubits != d:
        raise InputError("Density matrix dimension " + str(d) + " is not a power of two")
    return np.array([np.real(np.trace(P @ rho)) for P in pauli_set(n_qubits)]) / np.sqrt(d)


def density_matrix(v):
    """Inverse of superket"""
    v = np.asarray(v, dtype=float)
    n_qubits = int(round(np.log(len(v)) / np.log(4)))
    d = 2 ** n_qubits
    return sum(c * P for c, P in zip(v, pauli_set(n_qubits))) / np.sqrt(d)


def ptm_of_unitary(U):
    """
    PTM of the unitary channel rho -> U rho U^dag.

    Args:
        U (array_like): A 2^n x 2^n unitary

    Returns:
        PTM: R_ij = (1/d) Tr(P_i U P_j U^dag), an orthogonal matrix

    Raises:
        InputError: If U is not unitary within UNITARY_TOLERANCE
    """
    U = np.asarray(U, dtype=complex)
    d = len(U)
    n_qubits = int(round(np.log2(d)))
    if U.shape != (d, d) or 2 ** n_qubits != d:
        raise InputError("Unitary must be square with a power of two dimension, got " + str(U.shape))
    if np.max(np.abs(U @ U.conj().T - np.eye(d))) > UNITARY_TOLERANCE:
        raise InputError("Matrix is not unitary")
    paulis = pauli_set(n_qubits)
    R = np.array([[np.real(np.trace(P_i @ U @ P_j @ U.conj().T)) for P_j in paulis] for P_i in paulis]) / d
    return PTM(R, n_qubits)


def _check_probability(p):
    if not 0. <= p <= 1.:
        raise InputError("Channel strength must lie in [0, 1], got " + str(p))


def ptm_t1(p):
    """Amplitude damping with decay probability p = 1 - exp(-t/T1)"""
    _check_probability(p)
    root = np.sqrt(1. - p)
    return PTM(np.array([[1., 0., 0., 0.],
                         [0., root, 0., 0.],
                         [0., 0., root, 0.],
                         [p, 0., 0., 1. - p]]))


def ptm_tphi(p):
    """Pure dephasing with p = 1 - exp(-t/Tphi)"""
    _check_probability(p)
    return PTM(np.diag([1., 1. - p, 1. - p, 1.]))


def ptm_depolarizing(lam, n_qubits=1):
    """Depolarizing channel keeping a fraction lam of every non-identity Pauli component"""
    R = np.diag(np.full(4 ** n_qubits, float(lam)))
    R[0, 0] = 1.
    return PTM(R, n_qubits)


def idle_noise(duration, t1, t_phi=np.inf):
    """Relaxation followed by pure dephasing for a time duration"""
    p_phi = 0. if np.isinf(t_phi) else 1. - np.exp(-duration / t_phi)
    return ptm_compose(ptm_tphi(p_phi), ptm_t1(1. - np.exp(-duration / t1)))


def ptm_compose(R2, R1):
    """The channel R1 followed by R2"""
    if R2.n_qubits != R1.n_qubits:
        raise InputError("Cannot compose a " + str(R2.n_qubits) + " qubit PTM with a " + str(R1.n_qubits) +
                         " qubit one")
    return PTM(R2.R @ R1.R, R1.n_qubits)


def ptm_apply(R, v):
    v = np.asarray(v, dtype=float)
    if v.shape != (len(R.R),):
        raise InputError("Superket of length " + str(len(v)) + " does not match a " + str(R.n_qubits) +
                         " qubit PTM")
    return R.R @ v


def average_fidelity(R_target, R):
    """
    Average gate fidelity of a channel to a target, F = (Tr(R_target^-1 R) + d)/(d(d + 1)).

    Raises:
        InputError: If the target is singular or the dimensions differ
    """
    if R_target.n_qubits != R.n_qubits:
        raise InputError("Target and channel act on different numbers of qubits")
    if abs(np.linalg.det(R_target.R)) < MIN_TARGET_DETERMINANT:
        raise InputError("Target PTM is singular")
    d = R.dimension
    return float((np.trace(np.linalg.solve(R_target.R, R.R)) + d) / (d * (d + 1)))


def error_from_fidelity(fidelity):
    """Average gate error 1 - F"""
    return 1. - fidelity


# Clifford group


def load_clifford_table(name='xy'):
    """
    The single qubit Clifford group as a list of PTMs.

    Each entry of the table is a list of primitive gates applied left to right; the entries must realise 24 distinct
    channels.

    Returns:
        tuple: (decompositions, PTMs)
    """
    if name not in CLIFFORD_TABLES:
        raise InputError("Unknown Clifford table " + str(name) + "; known tables are " + str(sorted(CLIFFORD_TABLES)))
    with open(os.path.join(DATA_DIR, CLIFFORD_TABLES[name])) as handle:
        decompositions = json.load(handle)['gates']

    ptms = []
    for gates in decompositions:
        U = np.eye(2, dtype=complex)
        for gate in gates:
            U = PRIMITIVES[gate] @ U
        ptms.append(ptm_of_unitary(U).R)

    distinct = {tuple(np.round(R, 9).ravel()) for R in ptms}
    if len(decompositions) != 24 or len(distinct) != 24:
        raise InputError("Clifford table " + name + " does not enumerate 24 distinct elements")
    return decompositions, ptms


RBResult = namedtuple('RBResult', ['lengths', 'survival', 'fit', 'p', 'error_per_clifford'])
InterleavedResult = namedtuple('InterleavedResult', ['reference', 'interleaved', 'gate_error', 'direct_error'])


def _rb_survival(stream, lengths, noise, cliffords, interleaved_ideal=None, interleaved_noisy=None):
    """Survival probability of one random sequence per length"""
    generator = stream.generator()
    ground = superket(np.diag([1., 0.]))
    survival = []
    for m in lengths:
        v = ground.copy()
        ideal = np.eye(len(noise))
        for index in generator.integers(len(cliffords), size=m):
            clifford = cliffords[index]
            v = noise @ (clifford @ v)
            ideal = clifford @ ideal
            if interleaved_ideal is not None:
                v = interleaved_noisy @ v
                ideal = interleaved_ideal @ ideal
        # Ideal Clifford PTMs are orthogonal
        v = noise @ (ideal.T @ v)
        survival.append(float(v @ ground))
    return survival


def fit_rb_decay(lengths, survival):
    """
    Fit A p^m + B to a survival curve.

    Returns:
        tuple: (FitResult or None, p); the fit is None for a noiseless curve, whose decay is exactly one

    Raises:
        FitError: If the fit does not converge
    """
    lengths = np.asarray(lengths, dtype=float)
    survival = np.asarray(survival, dtype=float)
    if np.all(np.abs(survival - 1.) < NOISELESS_TOLERANCE):
        return None, 1.

    def model(m, A, p, B):
        return A * p ** m + B

    fit = least_squares_fit(model, lengths, survival, [0.5, 0.99, 0.5], bounds=([0., 0., 0.], [1., 1., 1.]),
                            names=('A', 'p', 'B'))
    if not fit.converged:
        raise FitError("Randomized benchmarking decay fit did not converge")
    return fit, float(fit['p'])


def rb_simulate(noise, lengths=RB_LENGTHS, n_random=RB_RANDOMIZATIONS, rng=None, table='xy', interleaved=None,
                processes=1):
    """
    Single qubit Clifford randomized benchmarking in the PTM picture.

    Every Clifford is followed by the same noise channel, an exact recovery Clifford closes each sequence and the
    survival probability of |0> is averaged over n_random sequences per length. Sequence i draws its Cliffords from
    child stream i, so the result does not depend on the number of processes.

    Args:
        noise (PTM): Trace preserving channel applied after every Clifford
        lengths (sequence): Numbers of Cliffords m
        n_random (int): Random sequences per length
        rng (RngStream): Source of randomness
        table (str): Which Clifford decomposition table to draw from
        interleaved (tuple): Optional (ideal PTM, noisy PTM) of a gate interleaved after every Clifford
        processes (int): Worker processes

    Returns:
        RBResult: Mean survival per length, the decay fit, p and the error per Clifford (1 - p)(d - 1)/d

    Raises:
        InputError: If the noise is not trace preserving
        FitError: If the decay cannot be fitted
    """
    if not noise.trace_preserving:
        raise InputError("RB noise channel must be trace preserving")
    if noise.n_qubits != 1:
        raise InputError("Only single qubit randomized benchmarking is supported")
    rng = rng if rng is not None else RngStream(0)
    lengths = tuple(int(m) for m in lengths)
    _, cliffords = load_clifford_table(table)

    gate_ideal, gate_noisy = (None, None) if interleaved is None else (interleaved[0].R, interleaved[1].R)
    worker = partial(_rb_survival, lengths=lengths, noise=noise.R, cliffords=cliffords,
                     interleaved_ideal=gate_ideal, interleaved_noisy=gate_noisy)
    streams = [rng.child(i) for i in range(n_random)]
    if processes > 1:
        with Pool(processes) as pool:
            runs = pool.map(worker, streams)
    else:
        runs = list(map(worker, streams))

    survival = np.mean(np.array(runs), axis=0)
    fit, p = fit_rb_decay(lengths, survival)
    d = noise.dimension
    logger.debug("RB over %d sequences: p = %g", n_random, p)
    return RBResult(np.array(lengths), survival, fit, p, (1. - p) * (d - 1) / d)


def interleaved_rb(noise, gate_ideal, gate_noisy, lengths=RB_LENGTHS, n_random=RB_RANDOMIZATIONS, rng=None,
                   table='xy', processes=1):
    """
    Reference and interleaved RB with the same random sequences.

    Returns:
        InterleavedResult: Both runs, the gate error (1 - p_int/p_ref)(d - 1)/d and, for comparison, the error
            1 - F of the noisy gate against the ideal one
    """
    rng = rng if rng is not None else RngStream(0)
    reference = rb_simulate(noise, lengths, n_random, rng, table, processes=processes)
    interleaved = rb_simulate(noise, lengths, n_random, rng, table, (gate_ideal, gate_noisy), processes)
    d = noise.dimension
    gate_error = (1. - interleaved.p / reference.p) * (d - 1) / d
    direct_error = error_from_fidelity(average_fidelity(gate_ideal, gate_noisy))
    return InterleavedResult(reference, interleaved, gate_error, direct_error)


def rb_document(result):
    """JSON ready report of an RB run"""
    return {'lengths': [int(m) for m in result.lengths],
            'survival': [float(s) for s in result.survival],
            'fit': None if result.fit is None else result.fit.as_dict(),
            'p': float(result.p),
            'error_per_clifford': float(result.error_per_clifford)}


# Residual ZZ


@dataclass(frozen=True)
class ZZModel:
    """
    Residual ZZ of two coupled transmons.

    Vars:
        zeta (float): Exact ZZ E11 - E01 - E10 in Hz
        zeta_approx (float): Perturbative estimate in Hz
        j1 (float): Exchange coupling in Hz
        levels (dict): Dressed energies E_kl in Hz with E00 = 0
        ratio (float): zeta/zeta_approx, one when both vanish
    """
    zeta: float
    zeta_approx: float
    j1: float
    levels: dict
    ratio: float

    def coherent_angle(self, tau):
        """Conditional phase 2 pi zeta tau/4 accumulated over an idle tau with the echo of the spectator"""
        return 2 * np.pi * self.zeta * np.asarray(tau) / 4.


def zz_estimate(f_i, f_j, alpha_i, alpha_j, j1):
    """
    Estimate the residual ZZ both from brute force diagonalisation and perturbatively.

    Raises:
        InputError: If the qubits or their two-excitation levels are within a few J1 of a collision
    """
    spectrum = two_transmon_spectrum(f_i, f_j, alpha_i, alpha_j, j1)
    if spectrum.zeta_approx == 0.:
        ratio = 1.
    else:
        ratio = spectrum.zeta_exact / spectrum.zeta_approx
    return ZZModel(spectrum.zeta_exact, spectrum.zeta_approx, j1, spectrum.levels, ratio)


ZZEcho = namedtuple('ZZEcho', ['zeta', 'error', 'fit', 'delays', 'signal'])


def _echo_model(tau, amplitude, decay, frequency, phase):
    return amplitude * np.exp(-tau / decay) * np.exp(1j * (2 * np.pi * frequency * tau + phase))


def zz_echo_experiment(device, rng, delays=None, pair=(0, 1), n_averages=1000, detuning=0., detuning_jitter=0.):
    """
    Measure the residual ZZ of a pair with an echo on the first qubit whose partner is excited in one arm only.

    The echo signal oscillates at zeta/2 and starts near -1. Reading out after a final pi/2 about x and about y gives
    both quadratures, so the complex signal z = (2 P_x - 1) + i (2 P_y - 1) turns in a definite sense and the sign of
    zeta follows from the fitted frequency.

    Args:
        device (VirtualDevice): The device
        rng (RngStream): Source of randomness
        delays (array_like): Total echo times; a grid over ZZ_SPAN by default
        pair (tuple): (echoed qubit, spectator)
        n_averages (int): Shots per point
        detuning (float): Static drive detuning in Hz
        detuning_jitter (float): Standard deviation of a per point frequency drift in Hz

    Returns:
        ZZEcho: zeta in Hz with its uncertainty, the fit and the measured signal

    Raises:
        CalibrationError: If a resolved oscillation loses its contrast, or outlasts the grid, within one period
    """
    delays = np.linspace(0., ZZ_SPAN, ZZ_POINTS) if delays is None else np.asarray(delays, dtype=float)
    spec = SweepSpec('zz_echo', {'delay': delays},
                     {'pair': tuple(pair), 'detuning': detuning, 'detuning_jitter': detuning_jitter}, n_averages)
    populations = device.execute(spec, rng=rng).data
    signal = (2. * populations[0] - 1.) + 1j * (2. * populations[1] - 1.)

    # Seed the frequency with the peak of a zero padded FFT; the sign is kept
    step = delays[1] - delays[0]
    n_fft = ZZ_FFT_PADDING * len(delays)
    spectrum = np.abs(np.fft.fft(signal - np.mean(signal), n_fft))
    frequencies = np.fft.fftfreq(n_fft, step)
    guess = frequencies[int(np.argmax(spectrum))]
    span = delays[-1] - delays[0]

    p0 = [max(np.abs(signal[0]), 0.1), span, guess, np.angle(signal[0])]
    bounds = ([0., 0.01 * step, -0.5 / step, -2 * np.pi], [1.5, np.inf, 0.5 / step, 2 * np.pi])
    fit = least_squares_fit(_echo_model, delays, signal, p0, bounds=bounds,
                            names=('amplitude', 'decay', 'frequency', 'phase'))
    if not fit.converged:
        raise FitError("ZZ echo fit did not converge")

    frequency, error = fit['frequency'], fit.error('frequency')
    if abs(frequency) > ZZ_SIGNIFICANCE * error:
        period = 1. / abs(frequency)
        if fit['decay'] < period:
            raise CalibrationError("Echo contrast decays in " + str(fit['decay']) + " s, within one oscillation " +
                                   "period of " + str(period) + " s")
        if span < period:
            raise CalibrationError("Delay grid of " + str(span) + " s is shorter than one oscillation period of " +
                                   str(period) + " s; extend the grid")
    return ZZEcho(2. * frequency, 2. * error, fit, delays, signal)


# Quantum volume


QuantumVolume = namedtuple('QuantumVolume', ['log2_volume', 'n_optimal', 'depths'])


def quantum_volume(n_max, epsilon):
    """
    Quantum volume with the achievable depth model d(n) = 1/(n epsilon(n)).

    log2 V_Q = max over n <= n_max of min(n, d(n)); depths are floored to whole layers.

    Args:
        n_max (int): Number of available qubits
        epsilon (callable or float): Effective error rate per qubit per layer, as a function of n or a constant

    Returns:
        QuantumVolume: log2 V_Q, the width achieving it and d(n) for n = 1..n_max

    Raises:
        InputError: If n_max < 1 or any epsilon is not positive
    """
    if n_max < 1:
        raise InputError("n_max must be at least 1, got " + str(n_max))
    rate = epsilon if callable(epsilon) else (lambda n: epsilon)
    widths = np.arange(1, int(n_max) + 1)
    rates = np.array([float(rate(n)) for n in widths])
    if np.any(rates <= 0.):
        raise InputError("Effective error rates must be positive")
    depths = np.floor(1. / (widths * rates) * (1. + 1e-12))
    scores = np.minimum(widths, depths)
    best = int(np.argmax(scores))
    return QuantumVolume(float(scores[best]), int(widths[best]), depths)
