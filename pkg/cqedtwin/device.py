"""
The physics of the virtual device: its hidden parameters, the driven transmon, the dispersive readout field, the
resonator and spectroscopy line shapes, residual ZZ between two transmons, and the IQ mixer.

Conventions
-----------
Frequencies of modes are in Hz, rates (kappa, 1/T1) in 1/s, and anything inside a Hamiltonian or a Langevin equation
in rad/s. The transmon is simulated in the frame rotating at the drive frequency, with Hamiltonian

    H = delta n - (alpha/2) q^dag q^dag q q + (Omega(t) q^dag + Omega(t)^* q) / 2

where delta is the qubit detuning from the drive and Omega(t) = drive_rate * envelope(t) * exp(i phase). A real
envelope therefore rotates about x and a phase of pi/2 rotates about y.

The dispersive shift chi is taken as a positive number by which the resonator moves up when the qubit is excited,
so the ground and excited state resonances sit at f_r - g^2/Delta and f_r - g^2/Delta + chi. Readout fields follow
the Langevin equation

    d alpha / dt = (-i delta_r - kappa/2) alpha - sqrt(kappa) a_in,      alpha_out = a_in + sqrt(kappa_c) alpha

with delta_r the detuning of the resonator (for the given qubit state) from the readout tone.
"""
import hashlib
import logging
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import h
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.special import expit

from cqedtwin import numerics
from cqedtwin.circuit import (critical_photon_number, dispersive_params, flux_from_current, steady_state_photons,
                              tunable_transmon_frequency)
from cqedtwin.errors import InputError
from cqedtwin.numerics import RngStream

logger = logging.getLogger(__name__)

# Transmon levels kept in the simulation
DEFAULT_LEVELS = 3
# Default Rabi rate per unit of envelope amplitude, in rad/s
DEFAULT_DRIVE_RATE = 2 * np.pi * 100e6
# Width in decades of photon number of the crossover to the bright state
PUNCHOUT_WIDTH_DECADES = 0.2
# Levels of two transmons closer than this many couplings count as a collision
COLLISION_FACTOR = 10.
# A pulse may keep at most this fraction of its energy within the top tenth of the sampled band
NYQUIST_ENERGY_LIMIT = 0.05
NYQUIST_BAND = 0.9
# Starts of channels must fall on the sample grid within this fraction of a sample
GRID_TOLERANCE = 1e-6

QUBIT = 'qubit'
READOUT = 'readout'
FLUX = 'flux'
TARGETS = (QUBIT, READOUT, FLUX)


@dataclass(frozen=True)
class MixerImperfections:
    """
    Static imperfections of an IQ mixer.

    Vars:
        lo_leak (complex): LO leakage, in units of the full-scale IF amplitude
        imbalance (float): Relative amplitude imbalance of the Q path
        skew (float): Phase error between the I and Q paths in rad
    """
    lo_leak: complex = 0j
    imbalance: float = 0.
    skew: float = 0.


@dataclass(frozen=True)
class GroundTruth:
    """
    The hidden parameters of a device. The simulator evolves these and the calibration pipeline tries to recover them.

    Vars:
        qubit_frequency (float): 0-1 transition frequency at the sweet spot, Hz
        anharmonicity (float): f01 - f12, Hz
        t1 (float): Energy relaxation time, s
        t_phi (float): Pure dephasing time, s
        resonator_frequency (float): Bare readout resonator frequency, Hz
        g (float): Qubit-resonator coupling, Hz
        kappa_c (float): Resonator coupling rate to the feedline, 1/s
        kappa_i (float): Resonator internal loss rate, 1/s
        readout_efficiency (float): Measurement efficiency eta in (0, 1]
        n_th (float): Thermal occupation of the qubit mode
        flux_period (float): Bias current per flux quantum in A, None for a fixed frequency qubit
        sweet_spot_current (float): Bias current of the sweet spot in A
        zz_matrix (tuple): Pairwise residual ZZ in Hz, as nested tuples, for multi-qubit devices
        mixer (MixerImperfections): Drive mixer imperfections
        drive_rate (float): Rabi rate per unit envelope amplitude, rad/s
    """
    qubit_frequency: float
    anharmonicity: float
    t1: float
    t_phi: float
    resonator_frequency: float
    g: float
    kappa_c: float
    kappa_i: float
    readout_efficiency: float = 1.
    n_th: float = 0.
    flux_period: float = None
    sweet_spot_current: float = 0.
    zz_matrix: tuple = None
    mixer: MixerImperfections = field(default_factory=MixerImperfections)
    drive_rate: float = DEFAULT_DRIVE_RATE

    def __post_init__(self):
        if not (self.t1 > 0 and self.t_phi > 0):
            raise InputError("T1 and T_phi must be positive")
        if self.kappa_c < 0 or self.kappa_i < 0 or not self.kappa > 0:
            raise InputError("Resonator rates must be non-negative with a positive total")
        if not 0. < self.readout_efficiency <= 1.:
            raise InputError("Readout efficiency must lie in (0, 1]")
        if self.n_th < 0:
            raise InputError("Thermal occupation must be non-negative")
        if self.anharmonicity < 0:
            raise InputError("Anharmonicity is f01 - f12 and must be non-negative for a transmon")
        if self.flux_period is not None and not self.flux_period > 0:
            raise InputError("flux_period must be positive")
        if self.qubit_frequency == self.resonator_frequency:
            raise InputError("Qubit and resonator are degenerate")

    @property
    def kappa(self):
        return self.kappa_c + self.kappa_i

    @property
    def t2_star(self):
        return 1. / (0.5 / self.t1 + 1. / self.t_phi)

    @property
    def p_thermal(self):
        """Excited state population of the qubit in thermal equilibrium"""
        return self.n_th / (1. + self.n_th)

    @property
    def chi(self):
        return self.dispersive_at().chi

    @property
    def ej_sum(self):
        """Maximum Josephson energy in Hz, taking the charging energy equal to the anharmonicity"""
        ec = self.anharmonicity
        return (self.qubit_frequency + ec) ** 2 / (8. * ec)

    def qubit_frequency_at(self, flux_bias=None):
        """0-1 frequency in Hz at a bias current; fixed frequency qubits ignore the bias"""
        if self.flux_period is None or flux_bias is None:
            return self.qubit_frequency
        phi = flux_from_current(flux_bias, self.sweet_spot_current, self.flux_period)
        return float(tunable_transmon_frequency(self.ej_sum, self.anharmonicity, phi))

    def dispersive_at(self, flux_bias=None):
        return dispersive_params(self.g, self.qubit_frequency_at(flux_bias), self.resonator_frequency,
                                 self.anharmonicity, self.kappa)

    def dressed_resonator_frequency(self, qubit_state=0, flux_bias=None):
        """Low power resonance in Hz with the qubit in the given state; level 2 shifts like level 1"""
        coupling = self.dispersive_at(flux_bias)
        shift = coupling.chi if qubit_state >= 1 else 0.
        return self.resonator_frequency - coupling.lamb_shift + shift

    def with_changes(self, **changes):
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return GroundTruth(**values)


@dataclass(frozen=True)
class ReadoutLine:
    """
    The measurement chain as seen in a transmission measurement.

    Vars:
        amplitude (float): Transmission amplitude A away from resonance
        slope (float): Linear variation of the transmission across the band
        delay (float): Electrical delay tau_v in s
        phase (float): Phase offset phi_0 in rad
        attenuation_db (float): Attenuation between the generator and the device in dB
    """
    amplitude: float = 1.
    slope: float = 0.
    delay: float = 0.
    phase: float = 0.
    attenuation_db: float = 70.


@dataclass(frozen=True)
class Channel:
    """
    One control segment of a pulse sequence.

    Vars:
        target (str): 'qubit', 'readout' or 'flux'
        envelope (np.ndarray): Complex samples. Qubit envelopes are in units of the drive rate, readout envelopes are
            the input field in sqrt(photons/s), flux envelopes are bias offsets in A
        carrier_detuning (float): Offset of the carrier from the sequence's drive frequency, Hz
        phase (float): Carrier phase in rad
        start (float): Start time in s, on the sample grid
        acquire (str): None, 'shots' to integrate single shots, or 'trace' for an averaged time trace
        weights (np.ndarray): Integration weights for 'shots' acquisitions; a boxcar is used when None
    """
    target: str
    envelope: np.ndarray
    carrier_detuning: float = 0.
    phase: float = 0.
    start: float = 0.
    acquire: str = None
    weights: np.ndarray = None

    def __post_init__(self):
        if self.target not in TARGETS:
            raise InputError("Unknown channel target " + repr(self.target))
        envelope = np.atleast_1d(np.asarray(self.envelope, dtype=complex))
        if not np.all(np.isfinite(envelope)):
            raise InputError("Envelopes must be finite")
        object.__setattr__(self, 'envelope', envelope)
        if self.acquire not in (None, 'shots', 'trace'):
            raise InputError("acquire must be None, 'shots' or 'trace'")
        if self.acquire is not None and self.target != READOUT:
            raise InputError("Only readout channels can acquire")

    def duration(self, sample_period):
        return len(self.envelope) * sample_period

    def end(self, sample_period):
        return self.start + self.duration(sample_period)


@dataclass(frozen=True)
class PulseSequence:
    """
    Time-sampled control of the device.

    Vars:
        sample_period (float): Sample period of every envelope, s
        channels (tuple): Channel segments
        drive_frequency (float): Qubit drive carrier in Hz; the qubit frame rotates at this frequency
        readout_frequency (float): Readout tone in Hz
        flux_bias (float): Static bias current in A
    """
    sample_period: float
    channels: tuple
    drive_frequency: float = None
    readout_frequency: float = None
    flux_bias: float = None

    def __post_init__(self):
        if not self.sample_period > 0:
            raise InputError("sample_period must be positive")
        object.__setattr__(self, 'channels', tuple(self.channels))
        for channel in self.channels:
            offset = channel.start / self.sample_period
            if abs(offset - round(offset)) > GRID_TOLERANCE or channel.start < 0:
                raise InputError("Channel start " + str(channel.start) + " is not on the sample grid")
        # Segments on the same target may not overlap
        for target in TARGETS:
            segments = sorted((c.start, c.end(self.sample_period)) for c in self.channels if c.target == target)
            for (_, end), (start, _) in zip(segments, segments[1:]):
                if start < end - GRID_TOLERANCE * self.sample_period:
                    raise InputError("Overlapping " + target + " segments")

    def sample_index(self, time):
        return int(round(time / self.sample_period))

    @property
    def duration(self):
        return max((c.end(self.sample_period) for c in self.channels), default=0.)


@dataclass(frozen=True)
class ShotBatch:
    """
    Integrated single-shot outcomes of one acquisition.

    Vars:
        outcomes (np.ndarray): Complex integrated heterodyne values, one per shot
        prep_labels (np.ndarray): The state each shot was meant to be prepared in, if known
        weights_id (str): Fingerprint of the integration weights
        metadata (dict): n_shots, integration_window, seed and stream
        true_states (np.ndarray): Qubit state at the start of the acquisition (simulation only)
        post_states (np.ndarray): Qubit state at the end of the acquisition (simulation only)
    """
    outcomes: np.ndarray
    prep_labels: np.ndarray = None
    weights_id: str = ''
    metadata: dict = field(default_factory=dict)
    true_states: np.ndarray = None
    post_states: np.ndarray = None

    def __post_init__(self):
        n_shots = self.metadata.get('n_shots', len(self.outcomes))
        if len(self.outcomes) != n_shots:
            raise InputError("ShotBatch holds " + str(len(self.outcomes)) + " outcomes but n_shots is "
                             + str(n_shots))

    @property
    def n_shots(self):
        return len(self.outcomes)

    def mean(self):
        return complex(np.mean(self.outcomes)) if len(self.outcomes) else complex('nan')


Trace = namedtuple('Trace', ['t', 'signal', 'n_shots', 'metadata'])
ReadoutTrajectory = namedtuple('ReadoutTrajectory', ['t', 'alpha', 'alpha_out', 'kappa', 'kappa_c'])
TwoTransmonSpectrum = namedtuple('TwoTransmonSpectrum', ['levels', 'zeta_exact', 'zeta_approx'])
MixerSpectrum = namedtuple('MixerSpectrum', ['p_lo', 'p_usb', 'p_lsb', 'f_lo', 'f_usb', 'f_lsb'])


def intracavity_photons(probe_power_dbm, gt, line=ReadoutLine(), detuning=0.):
    """
    Steady state photon number of the readout resonator for a probe of the given power at the generator.

    The probe is attenuated by the line, converted into a photon flux at the resonator frequency, and fed to the
    stiff-pump steady state n = kappa_c |a_in|^2 / (detuning^2 + kappa^2/4).
    """
    power = 10. ** ((np.asarray(probe_power_dbm) - 30. - line.attenuation_db) / 10.)
    flux = power / (h * gt.resonator_frequency)
    return steady_state_photons(np.sqrt(flux), gt.kappa_c, gt.kappa, detuning)


def bright_state_weight(n_photons, gt, flux_bias=None):
    """Logistic crossover, in log photon number, from the dressed to the bare resonator response"""
    if gt.g == 0:
        return np.zeros_like(np.asarray(n_photons, dtype=float))
    delta = gt.qubit_frequency_at(flux_bias) - gt.resonator_frequency
    n_crit = critical_photon_number(gt.g, delta)
    log_ratio = np.log10(np.maximum(n_photons, 1e-30) / n_crit)
    return expit(log_ratio / PUNCHOUT_WIDTH_DECADES)


def hanger_s21(f, f_res, kappa, kappa_c, line):
    """Transmission of a resonator side-coupled to a feedline, with kappa and kappa_c in 1/s"""
    f = np.asarray(f, dtype=float)
    kappa_hz = kappa / (2 * np.pi)
    baseline = line.amplitude * (1. + line.slope * (f - f_res) / f_res)
    dip = 1. - (kappa_c / kappa) / (1. + 2j * (f - f_res) / kappa_hz)
    return baseline * dip * np.exp(1j * (2 * np.pi * f * line.delay + line.phase))


def s21_response(f, probe_power, qubit_state, gt, line=ReadoutLine(), flux_bias=None):
    """
    Transmission of the readout resonator.

    At low power the resonance sits at the dressed frequency for the qubit state; well above the critical photon
    number the resonator is driven into its bright state and responds at the bare frequency for either state. A
    logistic crossover in log photon number joins the two regimes.

    Args:
        f (array_like): Probe frequencies in Hz
        probe_power (float): Probe power at the generator in dBm
        qubit_state (int): 0 or 1 (2 behaves like 1)
        gt (GroundTruth): The device
        line (ReadoutLine): The measurement chain
        flux_bias (float): Bias current in A

    Returns:
        np.ndarray: Complex S21
    """
    n_photons = intracavity_photons(probe_power, gt, line)
    weight = bright_state_weight(n_photons, gt, flux_bias)
    f_dressed = gt.dressed_resonator_frequency(qubit_state, flux_bias)
    f_res = (1. - weight) * f_dressed + weight * gt.resonator_frequency
    if weight > 0.5:
        logger.debug("Probe at %.1f dBm puts %.3g photons in the resonator, above critical", probe_power, n_photons)
    return hanger_s21(f, f_res, gt.kappa, gt.kappa_c, line)


def qubit_spectroscopy_response(f_s, spec_power, gt, flux_bias=None):
    """
    Steady state excited population of a qubit under a continuous drive.

    The two-level Bloch steady state, P = (s/2)/(1 + s + (delta T2)^2) with saturation parameter s = Omega^2 T1 T2,
    is a Lorentzian of half width sqrt(1/T2^2 + Omega^2 T1/T2) (rad/s) whose height saturates at one half.

    Args:
        f_s (array_like): Drive frequencies in Hz
        spec_power (float): Drive Rabi rate Omega in rad/s
        gt (GroundTruth): The device
        flux_bias (float): Bias current in A

    Returns:
        np.ndarray: Excited state population
    """
    if spec_power < 0:
        raise InputError("Spectroscopy drive rate must be non-negative")
    t2 = gt.t2_star
    delta = 2 * np.pi * (np.asarray(f_s, dtype=float) - gt.qubit_frequency_at(flux_bias))
    saturation = spec_power ** 2 * gt.t1 * t2
    return 0.5 * saturation / (1. + saturation + (delta * t2) ** 2)


def spectroscopy_half_width(spec_power, gt):
    """Half width at half maximum, in Hz, of the power broadened qubit line"""
    t2 = gt.t2_star
    return np.sqrt(1. / t2 ** 2 + spec_power ** 2 * gt.t1 / t2) / (2 * np.pi)


def lowering_operator(n_levels):
    return np.diag(np.sqrt(np.arange(1, n_levels, dtype=float)), k=1).astype(complex)


def collapse_operators(gt, n_levels=DEFAULT_LEVELS):
    """Relaxation sqrt(1/T1) q and pure dephasing sqrt(2/T_phi) n"""
    q = lowering_operator(n_levels)
    number = np.diag(np.arange(n_levels, dtype=float)).astype(complex)
    return [np.sqrt(1. / gt.t1) * q, np.sqrt(2. / gt.t_phi) * number]


def qubit_hamiltonians(detuning, anharmonicity, omega, n_levels=DEFAULT_LEVELS):
    """
    Rotating frame transmon Hamiltonians for a batch of drive samples.

    Args:
        detuning (array_like): Qubit minus drive frequency in rad/s, broadcast against omega
        anharmonicity (float): alpha in rad/s
        omega (array_like): Complex drive samples in rad/s
        n_levels (int): Truncation

    Returns:
        np.ndarray: Hamiltonians of shape omega.shape + (n_levels, n_levels)
    """
    omega = np.asarray(omega, dtype=complex)
    detuning = np.broadcast_to(np.asarray(detuning, dtype=float), omega.shape)
    q = lowering_operator(n_levels)
    q_dag = q.conj().T
    number = q_dag @ q
    static = -0.5 * anharmonicity * (q_dag @ q_dag @ q @ q)
    H = detuning[..., None, None] * number + static
    H = H + 0.5 * (omega[..., None, None] * q_dag + np.conj(omega)[..., None, None] * q)
    return H


def thermal_state(p_excited, n_levels=DEFAULT_LEVELS):
    rho = np.zeros((n_levels, n_levels), dtype=complex)
    rho[0, 0] = 1. - p_excited
    rho[1, 1] = p_excited
    return rho


def check_bandwidth(channel, sample_period):
    """
    Raise if a qubit drive cannot be represented at the sample rate.

    The carrier detuning must sit below the Nyquist frequency, and the modulated envelope may keep only a small
    fraction of its energy close to the edge of the band.
    """
    nyquist = 0.5 / sample_period
    if abs(channel.carrier_detuning) >= nyquist:
        raise InputError("Carrier detuning " + str(channel.carrier_detuning) + " Hz exceeds the Nyquist frequency")
    n = len(channel.envelope)
    if n < 4:
        return
    t = channel.start + np.arange(n) * sample_period
    modulated = channel.envelope * np.exp(-2j * np.pi * channel.carrier_detuning * t)
    spectrum = np.abs(np.fft.fft(modulated)) ** 2
    total = spectrum.sum()
    if total == 0:
        return
    freqs = np.fft.fftfreq(n, sample_period)
    edge = spectrum[np.abs(freqs) > NYQUIST_BAND * nyquist].sum() / total
    if edge > NYQUIST_ENERGY_LIMIT:
        raise InputError("Envelope bandwidth exceeds the Nyquist frequency of the sample period")


def drive_samples(channel, sample_period, gt):
    """Rabi rate of a qubit channel on each of its samples, in rad/s, in the frame of the drive"""
    t = channel.start + np.arange(len(channel.envelope)) * sample_period
    carrier = np.exp(1j * channel.phase - 2j * np.pi * channel.carrier_detuning * t)
    return gt.drive_rate * channel.envelope * carrier


def sequence_controls(seq, gt):
    """
    Piecewise constant qubit controls of a whole sequence.

    Returns:
        (np.ndarray, np.ndarray): Complex drive and qubit detuning (rad/s) on every sample interval from time zero to
            the end of the last qubit or flux segment
    """
    drive_frequency = seq.drive_frequency
    if drive_frequency is None:
        drive_frequency = gt.qubit_frequency_at(seq.flux_bias)
    controlled = [c for c in seq.channels if c.target in (QUBIT, FLUX)]
    n_samples = max((seq.sample_index(c.end(seq.sample_period)) for c in controlled), default=0)
    omega = np.zeros(n_samples, dtype=complex)
    bias = np.full(n_samples, 0. if seq.flux_bias is None else float(seq.flux_bias))
    for channel in controlled:
        first = seq.sample_index(channel.start)
        window = slice(first, first + len(channel.envelope))
        if channel.target == QUBIT:
            check_bandwidth(channel, seq.sample_period)
            omega[window] = drive_samples(channel, seq.sample_period, gt)
        else:
            bias[window] += np.real(channel.envelope)
    if gt.flux_period is None or (seq.flux_bias is None and not any(c.target == FLUX for c in controlled)):
        frequencies = np.full(n_samples, gt.qubit_frequency_at(seq.flux_bias))
    else:
        frequencies = np.array([gt.qubit_frequency_at(b) for b in bias])
    return omega, 2 * np.pi * (frequencies - drive_frequency)


def evolve_pulse(seq, rho0, gt, n_levels=DEFAULT_LEVELS, tolerance=numerics.ODE_TOLERANCE):
    """
    Integrate the driven, decohering transmon through the qubit and flux segments of a sequence.

    The drive is held constant over each sample, as an arbitrary waveform generator does. Readout segments are
    ignored here.

    Args:
        seq (PulseSequence): The controls
        rho0 (array_like): Initial density matrix on n_levels levels
        gt (GroundTruth): The device
        n_levels (int): Transmon truncation
        tolerance (float): Integration tolerance

    Returns:
        (np.ndarray, np.ndarray): The sample times and the density matrix at each of them

    Raises:
        InputError: If a drive exceeds the Nyquist frequency of the sample period
    """
    omega, detuning = sequence_controls(seq, gt)
    if len(omega) == 0:
        return np.zeros(1), np.asarray(rho0, dtype=complex)[None]
    t_grid = np.arange(len(omega) + 1) * seq.sample_period
    hamiltonians = qubit_hamiltonians(detuning, 2 * np.pi * gt.anharmonicity, omega, n_levels)
    trajectory = numerics.integrate_lindblad(hamiltonians, collapse_operators(gt, n_levels), rho0, t_grid,
                                             piecewise=True, tolerance=tolerance)
    return t_grid, trajectory


def dispersive_response(qubit_state, drive, kappa, chi, t):
    """
    Closed form readout field for a constant drive switched on at t = 0 with the resonator in vacuum.

        alpha_{g,e}(t) = 2 sqrt(kappa) a_in / (+-i chi - kappa) [1 - exp((-kappa/2 +- i chi/2) t)]

    with the readout tone midway between the two dressed resonances; the upper sign is the ground state.

    Args:
        qubit_state (int): 0 or 1
        drive (complex): Input field in sqrt(photons/s)
        kappa (float): Resonator decay rate in 1/s
        chi (float): Dispersive shift in rad/s
        t (array_like): Times in s
    """
    sign = 1. if qubit_state == 0 else -1.
    t = np.asarray(t, dtype=float)
    rate = -0.5 * kappa + sign * 0.5j * chi
    return 2 * np.sqrt(kappa) * drive / (sign * 1j * chi - kappa) * (1. - np.exp(rate * t))


def readout_trajectory(qubit_state, drive, gt, t_grid, readout_frequency=None, flux_bias=None,
                       tolerance=numerics.ODE_TOLERANCE):
    """
    Integrate the Langevin equation of the readout resonator for a fixed qubit state.

    Args:
        qubit_state (int): 0 or 1 (2 behaves like 1)
        drive (complex or array_like): Input field in sqrt(photons/s), either constant or one value per interval of
            t_grid
        gt (GroundTruth): The device
        t_grid (array_like): Strictly increasing times in s, the resonator is in vacuum at t_grid[0]
        readout_frequency (float): Readout tone in Hz; defaults to the midpoint of the dressed resonances
        flux_bias (float): Bias current in A
        tolerance (float): Integration tolerance on alpha

    Returns:
        ReadoutTrajectory: Intracavity field alpha(t) and output field alpha_out(t) on the grid
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if readout_frequency is None:
        readout_frequency = gt.dressed_resonator_frequency(0, flux_bias) + 0.5 * gt.dispersive_at(flux_bias).chi
    drive = np.asarray(drive, dtype=complex)
    if drive.ndim == 0:
        drive = np.full(len(t_grid) - 1, complex(drive))
    if len(drive) != len(t_grid) - 1:
        raise InputError("Need one drive value per interval of the time grid")

    detuning = 2 * np.pi * (gt.dressed_resonator_frequency(qubit_state, flux_bias) - readout_frequency)
    decay = -1j * detuning - 0.5 * gt.kappa
    coupling = np.sqrt(gt.kappa)

    def rhs(t, alpha, segment):
        return decay * alpha - coupling * drive[segment]

    alpha, _ = numerics.integrate_ode(rhs, np.zeros((), dtype=complex), t_grid, tolerance=tolerance)
    # The input field at each grid point is the drive of the interval it opens
    field_in = np.append(drive, drive[-1])
    alpha_out = field_in + np.sqrt(gt.kappa_c) * alpha
    return ReadoutTrajectory(t_grid, alpha, alpha_out, gt.kappa, gt.kappa_c)


def weights_fingerprint(weights):
    return hashlib.sha1(np.ascontiguousarray(weights, dtype=complex).tobytes()).hexdigest()[:12]


def boxcar_weights(t):
    """Constant weights of unit energy over the grid"""
    t = np.asarray(t, dtype=float)
    return np.full(len(t), 1. / np.sqrt(t[-1] - t[0]), dtype=complex)


def noise_density(traj, eta):
    """White noise spectral density per quadrature, in photons, for a chain of efficiency eta"""
    return traj.kappa_c / (2. * traj.kappa * eta)


def acquire_shots(traj_g, traj_e, prep, weights, n_shots, eta, rng, t1=np.inf, p_thermal=0.):
    """
    Sample integrated single-shot readout outcomes.

    Each shot integrates the output field against the weights, s = integral(w(t) alpha_out(t) dt), and adds complex
    Gaussian noise whose variance per quadrature is N0 integral(|w|^2 dt) with N0 = kappa_c / (2 kappa eta). For the
    optimal weights this makes SNR^2 = eta 4 gamma_phi. Shots prepared in the ground state are found excited with
    probability p_thermal; excited shots decay after an exponentially distributed time, in which case the excited
    trajectory is followed up to the flip and the ground one after it.

    Args:
        traj_g (ReadoutTrajectory): Ground state trajectory
        traj_e (ReadoutTrajectory): Excited state trajectory on the same grid
        prep (int or array_like): Intended state, either one label for every shot or one per shot
        weights (array_like): Complex weights on the trajectory grid, already conjugated as needed
        n_shots (int): Number of shots
        eta (float): Measurement efficiency in (0, 1]
        rng (RngStream or np.random.Generator): Source of randomness
        t1 (float): Qubit relaxation time in s
        p_thermal (float): Probability of a spurious excitation of ground state shots

    Returns:
        ShotBatch: The outcomes with the true initial and final qubit states of every shot

    Raises:
        InputError: If eta is outside (0, 1] or the weights do not match the grid
    """
    if not 0. < eta <= 1.:
        raise InputError("eta must lie in (0, 1], got " + str(eta))
    t = np.asarray(traj_g.t, dtype=float)
    weights = np.asarray(weights, dtype=complex)
    if len(weights) != len(t) or len(traj_e.t) != len(t):
        raise InputError("Weights and trajectories must share one time grid")
    if n_shots < 0:
        raise InputError("n_shots must be non-negative")
    seed, stream = (rng.seed, rng.stream_id) if isinstance(rng, RngStream) else (None, None)
    generator = rng.generator() if isinstance(rng, RngStream) else rng

    labels = np.broadcast_to(np.asarray(prep, dtype=int), (n_shots,)).copy()
    states = labels.copy()
    # Residual thermal excitation of shots meant to be in the ground state
    spurious = generator.random(n_shots) < p_thermal
    states[(labels == 0) & spurious] = 1
    excited = states >= 1

    duration = t[-1] - t[0]
    flip_times = generator.exponential(t1, n_shots) if np.isfinite(t1) else np.full(n_shots, np.inf)
    flipped = excited & (flip_times < duration)

    cumulative_g = cumulative_trapezoid(weights * traj_g.alpha_out, t, initial=0.)
    cumulative_e = cumulative_trapezoid(weights * traj_e.alpha_out, t, initial=0.)
    means = np.where(excited, cumulative_e[-1], cumulative_g[-1])
    if np.any(flipped):
        at_flip = t[0] + flip_times[flipped]
        before = np.interp(at_flip, t, cumulative_e.real) + 1j * np.interp(at_flip, t, cumulative_e.imag)
        from_g = np.interp(at_flip, t, cumulative_g.real) + 1j * np.interp(at_flip, t, cumulative_g.imag)
        means[flipped] = before + cumulative_g[-1] - from_g

    sigma = np.sqrt(noise_density(traj_g, eta) * trapezoid(np.abs(weights) ** 2, t))
    noise = sigma * (generator.standard_normal(n_shots) + 1j * generator.standard_normal(n_shots))
    post_states = np.where(excited & ~flipped, 1, 0)

    metadata = {'n_shots': int(n_shots), 'integration_window': float(duration), 'seed': seed, 'stream': stream}
    return ShotBatch(means + noise, prep_labels=labels, weights_id=weights_fingerprint(weights), metadata=metadata,
                     true_states=states, post_states=post_states)


def measurement_phase_factor(traj_g, traj_e, chi):
    """
    Factor multiplying the qubit coherence after an unrecorded readout pulse.

    Args:
        traj_g (ReadoutTrajectory): Ground state trajectory
        traj_e (ReadoutTrajectory): Excited state trajectory
        chi (float): Dispersive shift in rad/s

    Returns:
        complex: exp(-gamma_phi - i integral(chi Re(alpha_g alpha_e^*) dt))
    """
    t = traj_g.t
    gamma_phi = trapezoid(0.5 * traj_g.kappa * np.abs(traj_g.alpha - traj_e.alpha) ** 2, t)
    stark = trapezoid(chi * np.real(traj_g.alpha * np.conj(traj_e.alpha)), t)
    return np.exp(-gamma_phi - 1j * stark)


def two_transmon_spectrum(f_i, f_j, alpha_i, alpha_j, j1, n_levels=DEFAULT_LEVELS):
    """
    Levels of two exchange coupled transmons and their residual ZZ.

    Builds H = sum_k (f_k n_k - (alpha_k/2) n_k (n_k - 1)) + J1 (b_i^dag b_j + b_i b_j^dag) in Hz, diagonalises it,
    and labels each eigenstate by the bare state it overlaps most. The perturbative estimate uses the two-excitation
    exchange J2 = sqrt(2) J1,

        zeta = -J2^2 (1/(E20 - E11) + 1/(E02 - E11))

    Args:
        f_i, f_j (float): Qubit frequencies in Hz
        alpha_i, alpha_j (float): Anharmonicities f01 - f12 in Hz
        j1 (float): Exchange coupling in Hz
        n_levels (int): Levels per transmon

    Returns:
        TwoTransmonSpectrum: Dressed levels E_kl relative to E00, exact zeta = E11 - E01 - E10 and the estimate

    Raises:
        InputError: If two levels the coupling mixes lie within COLLISION_FACTOR * J1 of each other
    """
    e20_gap = f_i - f_j - alpha_i
    e02_gap = f_j - f_i - alpha_j
    for name, gap in (('f_i - f_j', f_i - f_j), ('E20 - E11', e20_gap), ('E02 - E11', e02_gap)):
        if abs(gap) <= COLLISION_FACTOR * abs(j1):
            raise InputError("Frequency collision: " + name + " = " + str(gap) + " Hz")

    b = lowering_operator(n_levels)
    identity = np.eye(n_levels)
    number = np.diag(np.arange(n_levels, dtype=float))

    def single(f, alpha):
        return f * number - 0.5 * alpha * number @ (number - identity)

    H = np.kron(single(f_i, alpha_i), identity) + np.kron(identity, single(f_j, alpha_j))
    exchange = np.kron(b.conj().T, b)
    H = H + j1 * (exchange + exchange.conj().T)
    values, vectors = numerics.eigh(H)

    # Dressed state k is the one with the largest weight on bare state k
    overlaps = np.abs(vectors) ** 2
    levels = {}
    for k in range(n_levels):
        for l in range(n_levels):
            levels[(k, l)] = values[int(np.argmax(overlaps[k * n_levels + l]))]
    ground = levels[(0, 0)]
    levels = {key: float(value - ground) for key, value in levels.items()}

    zeta_exact = levels[(1, 1)] - levels[(0, 1)] - levels[(1, 0)]
    j2_squared = 2. * j1 ** 2
    zeta_approx = -j2_squared * (1. / e20_gap + 1. / e02_gap) if j1 else 0.
    return TwoTransmonSpectrum(levels, zeta_exact, zeta_approx)


def mixer_output_spectrum(i_offset, q_offset, imbalance, skew, f_lo, f_if, lo_leak=0j):
    """
    Output spectrum of an IQ mixer driven with single sideband IF tones.

    The Q path carries a relative gain (1 + imbalance) and a phase error skew. The LO carrier leaks with amplitude
    lo_leak, which DC offsets on the I and Q inputs can null. Powers are relative to the desired sideband of an ideal
    mixer.

    Args:
        i_offset, q_offset (float): DC offsets in units of the full scale IF amplitude
        imbalance (float): Relative amplitude imbalance
        skew (float): Phase error in rad
        f_lo (float): LO frequency in Hz
        f_if (float): IF frequency in Hz; positive values select the upper sideband
        lo_leak (complex): LO leakage

    Returns:
        MixerSpectrum: Relative powers and frequencies of the carrier and both sidebands
    """
    p_lo = abs(complex(i_offset, q_offset) - lo_leak) ** 2
    path = (1. + imbalance) * np.exp(1j * skew)
    desired = abs(path + 1.) ** 2 / 4.
    undesired = abs(path - 1.) ** 2 / 4.
    f_usb = f_lo + abs(f_if)
    f_lsb = f_lo - abs(f_if)
    if f_if >= 0:
        return MixerSpectrum(p_lo, desired, undesired, f_lo, f_usb, f_lsb)
    return MixerSpectrum(p_lo, undesired, desired, f_lo, f_usb, f_lsb)
