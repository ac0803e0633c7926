"""
Characterisation of a bosonic mode dispersively coupled to a two level ancilla.

The cavity lives on a truncated Fock space of N levels and the ancilla on {g, e}; joint operators are ordered cavity
first, so joint index = 2 n + q. In frames rotating at the bare cavity and ancilla frequencies the coupling is

    H/hbar = -2 pi chi n |e><e| - pi K n (n - 1)

with chi and the self-Kerr K in Hz, so the ancilla line with n photons sits at f_q - n chi. Every protocol here is
idealised at the level it is described: ancilla rotations and number selective pulses are instantaneous, state
preparation of the cavity superposition is a primitive, and the cavity loses photons at kappa with optional pure
dephasing.
"""
import logging
from collections import namedtuple
from dataclasses import dataclass
from multiprocessing.pool import ThreadPool

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.signal import find_peaks
from scipy.stats import poisson

from cqedtwin.calibration import write_dataset
from cqedtwin.errors import CalibrationError, FitError, InputError
from cqedtwin.numerics import RngStream, least_squares_fit, liouvillian, propagator

logger = logging.getLogger(__name__)

# Default Fock truncation
N_FOCK = 32
# Displacements must keep |alpha|^2 below this fraction of the truncation
TRUNCATION_FRACTION = 0.25
# Largest population allowed in the top two Fock levels
TOP_LEVEL_TOLERANCE = 1e-6
# Number splitting peaks must be this many ancilla linewidths apart
RESOLUTION_FACTOR = 5.
# Peaks weaker than this fraction of the strongest are ignored by the splitting fit
PEAK_PROMINENCE = 0.01
# Smallest |beta0|^2 of the cavity T1 protocol
MIN_T1_PHOTONS = 4.
# Levels used for the cavity T2 protocol, which never leaves {|0>, |1>}
T2_LEVELS = 3

GROUND = np.array([1., 0.], dtype=complex)
EXCITED = np.array([0., 1.], dtype=complex)


@dataclass(frozen=True)
class CavityMode:
    """
    A storage mode and the ancilla used to read it.

    Vars:
        chi (float): Dispersive shift of the ancilla per photon in Hz
        kappa (float): Single photon loss rate in 1/s
        kerr (float): Self-Kerr in Hz
        gamma_phi (float): Pure dephasing rate of the cavity in 1/s
        qubit_frequency (float): Ancilla frequency with the cavity in vacuum, Hz
        linewidth (float): Ancilla half width at half maximum, Hz
        n_levels (int): Fock truncation
    """
    chi: float
    kappa: float = 0.
    kerr: float = 0.
    gamma_phi: float = 0.
    qubit_frequency: float = 5e9
    linewidth: float = 50e3
    n_levels: int = N_FOCK


def annihilation(n_levels):
    return np.diag(np.sqrt(np.arange(1, n_levels, dtype=float)), 1).astype(complex)


def _check_guard(alpha, n_levels):
    if np.abs(alpha) ** 2 >= TRUNCATION_FRACTION * n_levels:
        raise InputError("|alpha|^2 = " + str(np.abs(alpha) ** 2) + " is beyond the truncation guard " +
                         str(TRUNCATION_FRACTION * n_levels) + " of " + str(n_levels) + " Fock levels")


def check_truncation(rho):
    """Raise InputError if the top two Fock levels of a cavity state are populated"""
    populations = np.real(np.diag(rho))
    if np.sum(populations[-2:]) > TOP_LEVEL_TOLERANCE:
        raise InputError("Population " + str(np.sum(populations[-2:])) + " in the top two of " +
                         str(len(populations)) + " Fock levels; increase the truncation")


def displacement(alpha, n_levels=N_FOCK):
    """
    The displacement operator exp(alpha a^dag - alpha^* a) on N Fock levels.

    Raises:
        InputError: If |alpha|^2 is not below TRUNCATION_FRACTION * N
    """
    _check_guard(alpha, n_levels)
    a = annihilation(n_levels)
    return scipy.linalg.expm(alpha * a.conj().T - np.conj(alpha) * a)


def coherent_state(beta, n_levels=N_FOCK):
    """Density matrix of the coherent state |beta>"""
    ket = displacement(beta, n_levels)[:, 0]
    rho = np.outer(ket, ket.conj())
    check_truncation(rho)
    return rho


def fock_state(n, n_levels=N_FOCK):
    rho = np.zeros((n_levels, n_levels), dtype=complex)
    rho[n, n] = 1.
    return rho


def joint_state(rho_cavity, ancilla=GROUND):
    return np.kron(rho_cavity, np.outer(ancilla, np.conj(ancilla)))


def ancilla_rotation(n_levels, angle, axis='y'):
    """An ancilla rotation acting on the joint space"""
    sigma = {'x': np.array([[0, 1], [1, 0]]), 'y': np.array([[0, -1j], [1j, 0]])}[axis]
    return np.kron(np.eye(n_levels), scipy.linalg.expm(-0.5j * angle * sigma))


def dispersive_phases(mode, t):
    """Diagonal of exp(-i H t) on the joint space"""
    n = np.arange(mode.n_levels, dtype=float)
    cavity = -np.pi * mode.kerr * n * (n - 1.)
    energies = np.kron(cavity, np.ones(2)) + np.kron(-2 * np.pi * mode.chi * n, np.array([0., 1.]))
    return np.exp(-1j * energies * t)


def ancilla_excited_probability(rho_joint):
    return float(np.real(np.sum(np.diag(rho_joint)[1::2])))


def reduced_cavity(rho_joint):
    n_levels = len(rho_joint) // 2
    return np.einsum('iqjq->ij', rho_joint.reshape(n_levels, 2, n_levels, 2))


def selective_pi(n, n_levels=N_FOCK):
    """
    An ideal ancilla pi pulse conditioned on the cavity holding exactly n photons.

    Raises:
        InputError: If n is not a Fock level of the truncation
    """
    if not 0 <= n < n_levels:
        raise InputError("Photon number " + str(n) + " outside a truncation of " + str(n_levels))
    projector = np.zeros((n_levels, n_levels))
    projector[n, n] = 1.
    flip = np.array([[0, 1], [1, 0]], dtype=complex)
    return np.kron(np.eye(n_levels) - projector, np.eye(2)) + np.kron(projector, flip)


def _sample(probabilities, rng, n_shots):
    """Exact probabilities, or binomial estimates from n_shots when given"""
    probabilities = np.clip(np.asarray(probabilities, dtype=float), 0., 1.)
    if not n_shots:
        return probabilities
    rng = rng if rng is not None else RngStream(0)
    return rng.generator().binomial(int(n_shots), probabilities) / float(n_shots)


# Number splitting


SplittingFit = namedtuple('SplittingFit', ['chi', 'error', 'qubit_frequency', 'mean_photons', 'fit'])


def _lorentzian(f, center, half_width):
    return half_width ** 2 / ((f - center) ** 2 + half_width ** 2)


def number_splitting_spectrum(beta, frequencies, mode):
    """
    Ancilla spectrum with the cavity in |beta>: Poisson weighted lines at f_q - n chi.

    Raises:
        InputError: If chi does not exceed RESOLUTION_FACTOR ancilla linewidths
    """
    if abs(mode.chi) <= RESOLUTION_FACTOR * mode.linewidth:
        raise InputError("Number splitting unresolved: chi = " + str(mode.chi) + " Hz with an ancilla linewidth of " +
                         str(mode.linewidth) + " Hz")
    frequencies = np.asarray(frequencies, dtype=float)
    weights = poisson.pmf(np.arange(mode.n_levels), np.abs(beta) ** 2)
    lines = [w * _lorentzian(frequencies, mode.qubit_frequency - n * mode.chi, mode.linewidth)
             for n, w in enumerate(weights)]
    return np.sum(lines, axis=0)


def fit_number_splitting(frequencies, spectrum, n_extra=2):
    """
    Fit a comb of Lorentzians with a common spacing to a number split ancilla line.

    The highest frequency peak is taken as the vacuum line. n_extra peaks beyond those detected are included with free
    amplitudes so weak tails do not pull the spacing.

    Returns:
        SplittingFit: chi and its error in Hz, the vacuum line, the mean photon number from the peak weights

    Raises:
        CalibrationError: If fewer than two peaks are resolved
        FitError: If the fit does not converge
    """
    frequencies = np.asarray(frequencies, dtype=float)
    spectrum = np.asarray(spectrum, dtype=float)
    order = np.argsort(frequencies)[::-1]
    frequencies, spectrum = frequencies[order], spectrum[order]
    peaks, _ = find_peaks(spectrum, prominence=PEAK_PROMINENCE * np.max(spectrum))
    if len(peaks) < 2:
        raise CalibrationError("Number splitting unresolved: " + str(len(peaks)) + " peak(s) found")

    centers = frequencies[peaks]
    chi0 = float(np.median(-np.diff(centers)))
    n_peaks = len(peaks) + n_extra
    step = abs(frequencies[1] - frequencies[0])

    def model(f, f0, chi, half_width, *amplitudes):
        return sum(A * _lorentzian(f, f0 - n * chi, half_width) for n, A in enumerate(amplitudes))

    amplitudes = list(spectrum[peaks]) + [0.] * n_extra
    p0 = [centers[0], chi0, 2 * step] + amplitudes
    lower = [centers[0] - chi0 / 2, chi0 / 2, 0.] + [0.] * n_peaks
    upper = [centers[0] + chi0 / 2, 2 * chi0, chi0] + [np.inf] * n_peaks
    names = ('f0', 'chi', 'half_width') + tuple('A' + str(n) for n in range(n_peaks))
    fit = least_squares_fit(model, frequencies, spectrum, p0, bounds=(lower, upper), names=names)
    if not fit.converged:
        raise FitError("Number splitting fit did not converge")

    weights = np.asarray(fit.params[3:])
    mean_photons = float(np.sum(np.arange(n_peaks) * weights) / np.sum(weights))
    return SplittingFit(fit['chi'], fit.error('chi'), fit['f0'], mean_photons, fit)


# Ramsey revival


def ramsey_revival(beta, t, chi):
    """
    Ancilla Ramsey signal with the cavity in |beta>,

        P_e = (1 + exp(-2 |beta|^2 sin^2(chi t/2)) cos(|beta|^2 sin(chi t)))/2

    with chi converted to rad/s. The signal revives fully every 1/chi.
    """
    phase = 2 * np.pi * chi * np.asarray(t, dtype=float)
    n_bar = np.abs(beta) ** 2
    return 0.5 * (1. + np.exp(-2. * n_bar * np.sin(phase / 2.) ** 2) * np.cos(n_bar * np.sin(phase)))


def ramsey_revival_joint(beta, t, mode):
    """
    The same Ramsey experiment evolved on the joint density matrix: pi/2 about y, free evolution under the dispersive
    Hamiltonian including self-Kerr, pi/2 about y, then the ancilla excited population.
    """
    rho = joint_state(coherent_state(beta, mode.n_levels))
    half_pi = ancilla_rotation(mode.n_levels, np.pi / 2)
    rho = half_pi @ rho @ half_pi.conj().T
    populations = []
    for time in np.atleast_1d(t):
        phases = dispersive_phases(mode, time)
        evolved = phases[:, None] * rho * phases.conj()[None, :]
        evolved = half_pi @ evolved @ half_pi.conj().T
        populations.append(ancilla_excited_probability(evolved))
    return np.array(populations)


def revival_time(t, p_excited, threshold=0.75):
    """
    First revival of a Ramsey trace: the maximum after the signal first drops below threshold, refined with a parabola.

    Raises:
        CalibrationError: If the trace never collapses or never revives on the grid
    """
    t = np.asarray(t, dtype=float)
    p_excited = np.asarray(p_excited, dtype=float)
    collapsed = np.nonzero(p_excited < threshold)[0]
    if len(collapsed) == 0:
        raise CalibrationError("Ramsey signal never collapses below " + str(threshold))
    after = collapsed[0] + np.nonzero(p_excited[collapsed[0]:] > threshold)[0]
    if len(after) == 0:
        raise CalibrationError("No revival on the time grid")
    # The revival is the maximum of the first excursion back above threshold
    start = after[0]
    stop = start + np.argmax(p_excited[start:] < threshold) if np.any(p_excited[start:] < threshold) else len(t)
    k = start + int(np.argmax(p_excited[start:stop]))
    if 0 < k < len(t) - 1:
        y0, y1, y2 = p_excited[k - 1:k + 2]
        curvature = y0 - 2 * y1 + y2
        if curvature < 0:
            return float(t[k] + 0.5 * (y0 - y2) / curvature * (t[k + 1] - t[k]))
    return float(t[k])


# Cavity coherence


CavityDecay = namedtuple('CavityDecay', ['time', 'error', 'fit', 'delays', 'signal'])


def cavity_t1_experiment(mode, beta0, delays, rng=None, n_shots=None):
    """
    Cavity energy relaxation from the decay of a coherent state.

    Pure loss keeps a coherent state coherent with amplitude beta0 exp(-kappa t/2). After each delay a selective pi on
    the vacuum flags the ancilla, so its excited population is P_vac = exp(-|beta0|^2 exp(-kappa t)).

    Args:
        mode (CavityMode): The mode
        beta0 (complex): Initial displacement with |beta0|^2 >= MIN_T1_PHOTONS
        delays (array_like): Waiting times in s
        rng (RngStream): Used when n_shots is given
        n_shots (int): Shots per point; exact populations when None

    Returns:
        CavityDecay: The fitted T1 of the mode with the measured trace

    Raises:
        InputError: If the initial photon number is too small
        CalibrationError: If the grid is shorter than two fitted lifetimes
    """
    n_bar = abs(beta0) ** 2
    if n_bar < MIN_T1_PHOTONS:
        raise InputError("Cavity T1 needs |beta0|^2 >= " + str(MIN_T1_PHOTONS) + ", got " + str(n_bar))
    delays = np.asarray(delays, dtype=float)
    flag = selective_pi(0, mode.n_levels)
    vacuum = []
    for t in delays:
        rho = joint_state(coherent_state(beta0 * np.exp(-0.5 * mode.kappa * t), mode.n_levels))
        vacuum.append(ancilla_excited_probability(flag @ rho @ flag.conj().T))
    signal = _sample(vacuum, rng, n_shots)

    def model(t, photons, lifetime):
        return np.exp(-photons * np.exp(-t / lifetime))

    fit = least_squares_fit(model, delays, signal, [n_bar, delays[-1] / 3.], bounds=([0., 0.], [np.inf, np.inf]),
                            names=('photons', 't1'))
    if not fit.converged:
        raise FitError("Cavity T1 fit did not converge")
    if delays[-1] < 2. * fit['t1']:
        raise CalibrationError("Delay grid ends at " + str(delays[-1]) + " s, before two cavity lifetimes of " +
                               str(fit['t1']) + " s")
    return CavityDecay(fit['t1'], fit.error('t1'), fit, delays, signal)


def superposition_preparation(n_levels):
    """A rotation in the {|0>, |1>} subspace taking vacuum to (|0> + |1>)/sqrt(2)"""
    generator = np.zeros((n_levels, n_levels), dtype=complex)
    generator[1, 0], generator[0, 1] = 1., -1.
    return scipy.linalg.expm(np.pi / 4 * generator)


def cavity_t2_experiment(mode, delays, rng=None, n_shots=None):
    """
    Cavity dephasing on the equator of the {|0>, |1>} pseudo Bloch sphere.

    The superposition (|0> + |1>)/sqrt(2) waits under loss and pure dephasing, the preparation is undone and the vacuum
    population P0 = (1 + exp(-t/T2))/2 is read, with 1/T2 = kappa/2 + gamma_phi.

    Returns:
        CavityDecay: The fitted T2 of the mode with the measured trace
    """
    delays = np.asarray(delays, dtype=float)
    a = annihilation(T2_LEVELS)
    number = a.conj().T @ a
    collapse = [np.sqrt(mode.kappa) * a, np.sqrt(2. * mode.gamma_phi) * number]
    generator = liouvillian(np.zeros((T2_LEVELS, T2_LEVELS)), collapse)

    prepare = superposition_preparation(T2_LEVELS)
    rho0 = prepare @ fock_state(0, T2_LEVELS) @ prepare.conj().T
    vacuum = []
    for t in delays:
        rho = (propagator(generator, t) @ rho0.reshape(-1)).reshape(T2_LEVELS, T2_LEVELS)
        rho = prepare.conj().T @ rho @ prepare
        vacuum.append(float(np.real(rho[0, 0])))
    signal = _sample(vacuum, rng, n_shots)

    def model(t, amplitude, lifetime, offset):
        return offset + amplitude * np.exp(-t / lifetime)

    fit = least_squares_fit(model, delays, signal, [0.5, delays[-1] / 3., 0.5],
                            bounds=([0., 0., 0.], [1., np.inf, 1.]), names=('amplitude', 't2', 'offset'))
    if not fit.converged:
        raise FitError("Cavity T2 fit did not converge")
    return CavityDecay(fit['t2'], fit.error('t2'), fit, delays, signal)


# Parity and Wigner tomography


ParityOutcome = namedtuple('ParityOutcome', ['parity', 'p_even', 'state'])


def parity_operator(n_levels):
    return np.diag((-1.) ** np.arange(n_levels)).astype(complex)


def parity_map_and_measure(rho_cavity, rng=None, ancilla=GROUND):
    """
    Map the photon number parity onto the ancilla and measure it.

    pi/2 about y, a conditional phase of pi per photon (an idle of 1/(2 chi)), pi/2 about y: even states end in e, odd
    states in g. The outcome is sampled and the cavity is left in the normalised projection.

    Returns:
        ParityOutcome: +1 or -1, the probability of +1, and the post measurement cavity state
    """
    rho_cavity = np.asarray(rho_cavity, dtype=complex)
    n_levels = len(rho_cavity)
    rho = joint_state(rho_cavity, ancilla)
    half_pi = ancilla_rotation(n_levels, np.pi / 2)
    # C_phase(pi) = exp(i pi n |e><e|)
    phase = np.exp(1j * np.pi * np.kron(np.arange(n_levels, dtype=float), np.array([0., 1.])))
    unitary = half_pi @ np.diag(phase) @ half_pi
    rho = unitary @ rho @ unitary.conj().T

    p_even = ancilla_excited_probability(rho)
    rng = rng if rng is not None else RngStream(0)
    even = rng.generator().random() < p_even
    keep = np.kron(np.ones(n_levels), np.array([0., 1.]) if even else np.array([1., 0.]))
    projected = keep[:, None] * rho * keep[None, :]
    state = reduced_cavity(projected)
    state = state / np.real(np.trace(state))
    return ParityOutcome(1 if even else -1, p_even, state)


def wigner_point(rho, alpha, parity=None):
    """W(alpha) = (2/pi) Tr[D(alpha)^dag rho D(alpha) P]"""
    n_levels = len(rho)
    D = displacement(alpha, n_levels)
    parity = parity_operator(n_levels) if parity is None else parity
    return float(2. / np.pi * np.real(np.trace(D.conj().T @ rho @ D @ parity)))


def wigner_scan(rho, alphas, processes=1):
    """
    Wigner function of a cavity state from displaced parities.

    Args:
        rho (array_like): Cavity density matrix
        alphas (array_like): Complex grid of any shape
        processes (int): Threads evaluating grid points

    Returns:
        np.ndarray: W on the grid, real

    Raises:
        InputError: If any grid point is beyond the truncation guard
    """
    rho = np.asarray(rho, dtype=complex)
    alphas = np.asarray(alphas, dtype=complex)
    _check_guard(np.max(np.abs(alphas)), len(rho))
    parity = parity_operator(len(rho))
    points = alphas.ravel()

    def evaluate(alpha):
        return wigner_point(rho, alpha, parity)

    if processes > 1:
        with ThreadPool(processes) as pool:
            values = pool.map(evaluate, points)
    else:
        values = [evaluate(alpha) for alpha in points]
    return np.array(values).reshape(alphas.shape)


def wigner_frame(alphas, wigner):
    alphas = np.asarray(alphas).ravel()
    return pd.DataFrame({'re_alpha': np.real(alphas), 'im_alpha': np.imag(alphas),
                         'wigner': np.asarray(wigner).ravel()})


def write_wigner(path, alphas, wigner, metadata=None):
    """Write a Wigner map as a CSV grid (re_alpha, im_alpha, wigner)"""
    write_dataset(path, wigner_frame(alphas, wigner), metadata or {})
