"""
Design-stage budgets for a cQED setup: thermal photons propagating down attenuated input lines, noise added by the
output amplification chain, the drive power a qubit gate needs, and the T1 limits set by dielectric and inductive
losses, by the control wiring and by the electromagnetic environment.

Everything here is a closed-form calculator. Chains are described by ordered lists of stages running from room
temperature toward the device.
"""
import logging
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from scipy.constants import h, hbar, k as k_B
from scipy.integrate import trapezoid

from cqedtwin.errors import InputError

logger = logging.getLogger(__name__)

ROOM_TEMPERATURE = 300.
# Characteristic impedance of the coaxial lines
LINE_IMPEDANCE = 50.
# Participations are allowed to sum to one within rounding
PARTICIPATION_SLACK = 1e-12


@dataclass(frozen=True)
class ChainStage:
    """
    One temperature stage of an input line.

    Vars:
        temperature (float): Stage temperature in kelvin
        attenuation_db (float): Attenuator thermalised at this stage, in dB
        cable_loss_db (float): Insertion loss of the coax segment arriving at this stage, in dB
        label (str): Name of the stage
    """
    temperature: float
    attenuation_db: float = 0.
    cable_loss_db: float = 0.
    label: str = ''

    def __post_init__(self):
        if not self.temperature > 0:
            raise InputError("Stage temperature must be positive, got " + str(self.temperature))
        if self.attenuation_db < 0 or self.cable_loss_db < 0:
            raise InputError("Attenuation and cable loss must be non-negative")


@dataclass(frozen=True)
class AmpStage:
    """
    One amplifier of an output chain.

    Vars:
        gain_db (float): Power gain in dB
        noise_temperature (float): Added noise temperature in kelvin
        label (str): Name of the amplifier
    """
    gain_db: float
    noise_temperature: float
    label: str = ''

    def __post_init__(self):
        if self.noise_temperature < 0:
            raise InputError("Noise temperature must be non-negative")


@dataclass(frozen=True)
class LossContribution:
    """
    A single entry of a loss budget: a region's participation and its loss tangent (capacitive budgets) or inverse
    surface quality factor (inductive budgets).
    """
    label: str
    participation: float
    loss: float

    def __post_init__(self):
        if not 0. <= self.participation <= 1.:
            raise InputError("Participation of " + self.label + " must lie in [0, 1]")
        if self.loss < 0:
            raise InputError("Loss of " + self.label + " must be non-negative")


ChainResult = namedtuple('ChainResult', ['n_device', 'per_stage'])
AmplifierResult = namedtuple('AmplifierResult', ['snr_ratio', 'effective_noise_temperature', 'snr_in', 'snr_out',
                                                 'diverges'])
LossBudget = namedtuple('LossBudget', ['rate', 'breakdown', 't1_limit'])
WiringLimits = namedtuple('WiringLimits', ['gamma_drive', 'gamma_flux', 't1_drive', 't1_flux'])
RabiBudget = namedtuple('RabiBudget', ['v0_at_device', 'power_at_device_dbm', 'v_peak_at_fridge_input',
                                       'power_at_fridge_input_dbm'])
CoherenceBudget = namedtuple('CoherenceBudget', ['rows', 'total_rate', 't1_limit'])


def db_to_linear(db):
    return 10. ** (np.asarray(db) / 10.)


def watts_to_dbm(power):
    return 10. * np.log10(power) + 30.


def thermal_occupation(frequency, temperature):
    """
    Bose-Einstein occupation of a mode.

    Args:
        frequency (float): Mode frequency in Hz
        temperature (float): Temperature in kelvin

    Returns:
        float: 1/(exp(hf/kT) - 1)
    """
    return 1. / np.expm1(h * frequency / (k_B * temperature))


def chain_occupation(stages, frequency, n_in, cable_at_colder_end=True):
    """
    Propagate thermal photons down an attenuated input line.

    Each stage acts as a beamsplitter: a fraction 1/A of the incoming photons is transmitted and the rest is replaced
    by the thermal population of the stage, n <- n/A + (1 - 1/A) nbar(f, T). The insertion loss of the coax segment
    arriving at a stage is charged at the stage's own (colder) temperature by default, which is the conservative
    choice; with cable_at_colder_end=False it is charged at the temperature of the warmer end instead.

    Args:
        stages (list): ChainStage entries ordered from room temperature toward the device
        frequency (float): Frequency in Hz
        n_in (float): Photon occupation entering the top of the chain
        cable_at_colder_end (bool): Where to thermalise cable losses

    Returns:
        ChainResult: The occupation at the device and after every stage
    """
    n = float(n_in)
    per_stage = []
    warmer_temperature = ROOM_TEMPERATURE
    for stage in stages:
        cable_temperature = stage.temperature if cable_at_colder_end else warmer_temperature
        n = _attenuate(n, stage.cable_loss_db, frequency, cable_temperature)
        n = _attenuate(n, stage.attenuation_db, frequency, stage.temperature)
        per_stage.append(n)
        warmer_temperature = stage.temperature
    return ChainResult(n, np.array(per_stage))


def _attenuate(n, attenuation_db, frequency, temperature):
    transmission = 1. / db_to_linear(attenuation_db)
    return n * transmission + (1. - transmission) * thermal_occupation(frequency, temperature)


def thermal_dephasing(n_th, kappa, chi):
    """
    Dephasing of a qubit from residual thermal photons in its readout resonator.

    Args:
        n_th (float): Thermal photon number in the resonator
        kappa (float): Resonator linewidth in 1/s
        chi (float): Dispersive shift in rad/s

    Returns:
        float: n_th kappa chi^2 / (kappa^2 + chi^2) in 1/s
    """
    if n_th < 0 or kappa < 0 or chi < 0:
        raise InputError("thermal_dephasing inputs must be non-negative")
    if kappa == 0 and chi == 0:
        return 0.
    return n_th * kappa * chi ** 2 / (kappa ** 2 + chi ** 2)


def amplifier_chain_snr(p_signal, t_in, bandwidth, stages):
    """
    SNR degradation through a chain of amplifiers.

    A single amplifier degrades the SNR by SNR_in/SNR_out = 1 + T_N/T_in. A cascade is reduced to a single effective
    noise temperature with the Friis formula, T_eff = T_N1 + T_N2/G1 + T_N3/(G1 G2) + ...

    Args:
        p_signal (float): Signal power at the chain input in watt
        t_in (float): Effective temperature of the input noise in kelvin
        bandwidth (float): Noise bandwidth in Hz
        stages (list): AmpStage entries in signal order

    Returns:
        AmplifierResult: snr_ratio (SNR_in/SNR_out, at least one), the effective noise temperature, the input and
            output SNRs, and a flag set when the ratio diverges because t_in is zero
    """
    if not bandwidth > 0:
        raise InputError("bandwidth must be positive")
    effective_tn = 0.
    cumulative_gain = 1.
    for stage in stages:
        effective_tn += stage.noise_temperature / cumulative_gain
        cumulative_gain *= db_to_linear(stage.gain_db)

    if t_in <= 0:
        diverges = effective_tn > 0
        ratio = np.inf if diverges else 1.
        snr_in = np.inf
    else:
        diverges = False
        ratio = 1. + effective_tn / t_in
        snr_in = p_signal / (k_B * t_in * bandwidth)
    snr_out = snr_in / ratio if np.isfinite(ratio) else 0.
    if diverges:
        logger.warning("Noise-free input with a noisy amplifier chain; SNR ratio diverges")
    return AmplifierResult(ratio, effective_tn, snr_in, snr_out, diverges)


def _check_participations(contribs):
    total = sum(c.participation for c in contribs)
    if total > 1. + PARTICIPATION_SLACK:
        raise InputError("Participations sum to " + str(total) + ", more than one")


def dielectric_loss_budget(contribs, omega, eta_n=1.):
    """
    Capacitive loss budget, Gamma = eta_n omega sum_i p_i tan(delta_i).

    Args:
        contribs (list): LossContribution entries with loss tangents
        omega (float): Mode angular frequency in rad/s
        eta_n (float): Transmon adjustment factor, close to one

    Returns:
        LossBudget: Total rate, per-contribution rates and the T1 limit
    """
    _check_participations(contribs)
    breakdown = np.array([eta_n * omega * c.participation * c.loss for c in contribs])
    rate = float(breakdown.sum())
    return LossBudget(rate, breakdown, 1. / rate if rate > 0 else np.inf)


def inductive_loss_budget(contribs, omega, eta_phi=1.):
    """
    Inductive loss budget, Gamma = eta_phi sum_i omega alpha_i / Q_s,i.

    Args:
        contribs (list): LossContribution entries holding kinetic participations alpha_i and 1/Q_s,i
        omega (float): Mode angular frequency in rad/s
        eta_phi (float): Transmon adjustment factor, close to one

    Returns:
        float: The decay rate in 1/s
    """
    _check_participations(contribs)
    return float(sum(eta_phi * omega * c.participation * c.loss for c in contribs))


def surface_participation_estimate(d, t, eps_bulk, eps_surface):
    """
    Participation of a thin interface layer of thickness t between electrodes separated by d.

    Returns:
        float: (eps_bulk / eps_surface) (2t / d)
    """
    if not (d > 0 and t >= 0):
        raise InputError("Need d > 0 and t >= 0")
    return (eps_bulk / eps_surface) * (2. * t / d)


def wiring_T1_limits(omega_q, c_sigma, z0, drive_cc, flux_cc, flux_lc):
    """
    T1 limits set by the qubit drive line and the flux-bias line.

    The drive line couples capacitively, Gamma_D = omega^2 Z0 Cc^2 / C_sigma. The flux line couples through a mutual
    inductance Lc and a stray capacitance Cc; it behaves as a filter with cutoff omega_c = 1/sqrt(Lc Cc), giving
    Gamma_FBL = (1/(Z0 C_sigma)) (omega/omega_c)^4.

    Args:
        omega_q (float): Qubit angular frequency in rad/s
        c_sigma (float): Total qubit capacitance in farad
        z0 (float): Line impedance in ohm
        drive_cc (float): Drive line coupling capacitance in farad
        flux_cc (float): Flux line coupling capacitance in farad
        flux_lc (float): Flux line mutual inductance in henry

    Returns:
        WiringLimits: Both rates and the corresponding T1 limits
    """
    for name, value in (('omega_q', omega_q), ('c_sigma', c_sigma), ('z0', z0), ('flux_cc', flux_cc),
                        ('flux_lc', flux_lc)):
        if not value > 0:
            raise InputError(name + " must be positive")
    gamma_drive = omega_q ** 2 * z0 * drive_cc ** 2 / c_sigma
    omega_c = 1. / np.sqrt(flux_lc * flux_cc)
    gamma_flux = (omega_q / omega_c) ** 4 / (z0 * c_sigma)
    return WiringLimits(gamma_drive, gamma_flux, 1. / gamma_drive if gamma_drive > 0 else np.inf, 1. / gamma_flux)


def env_impedance_decay(re_z, c_sigma):
    """Decay rate 1/(Re[Z] C_sigma) of a qubit shunted by a dissipative environment"""
    if not (re_z > 0 and c_sigma > 0):
        raise InputError("re_z and c_sigma must be positive")
    return 1. / (re_z * c_sigma)


def gaussian_envelope(sigma, duration, sample_period):
    """Peak-normalised Gaussian centred in the window, sampled at the given period"""
    t = np.arange(int(round(duration / sample_period)) + 1) * sample_period
    return np.exp(-0.5 * ((t - duration / 2.) / sigma) ** 2)


def _raw_rabi_rate(cc, c_sigma, z):
    """Rabi rate per volt from the charge coupling, (Cc/C_sigma) Q_zpf / hbar, before unit calibration"""
    q_zpf = np.sqrt(hbar / (2. * z))
    return (cc / c_sigma) * q_zpf / hbar


# Reference device used to calibrate the units of the charge coupling: a 0.1 fF drive capacitance on a 65 fF transmon
# with a 10 nH junction, a 20 ns Gaussian pi pulse with sigma = 5 ns, needing -66 dBm at the qubit
_REFERENCE_SAMPLE_PERIOD = 0.1e-9
_REFERENCE_ENVELOPE = gaussian_envelope(5e-9, 20e-9, _REFERENCE_SAMPLE_PERIOD)
_REFERENCE_POWER_DBM = -66.
_reference_area = trapezoid(_REFERENCE_ENVELOPE, dx=_REFERENCE_SAMPLE_PERIOD)
_reference_v0 = np.pi / (_raw_rabi_rate(0.1e-15, 65e-15, np.sqrt(10e-9 / 65e-15)) * _reference_area)
_target_v0 = np.sqrt(2. * LINE_IMPEDANCE * 10. ** ((_REFERENCE_POWER_DBM - 30.) / 10.))
# Multiplies the raw Rabi rate so that the reference device needs exactly the reference power
DRIVE_UNIT_CALIBRATION = _reference_v0 / _target_v0


def rabi_drive_budget(cc, c_sigma, z, target_angle, envelope, sample_period, line_attenuation_db):
    """
    Drive amplitude and power needed for a rotation of a given angle.

    Solves |Theta| = Omega V0 integral(s(t) dt) for V0, with Omega = (Cc/C_sigma) Q_zpf / hbar times the unit
    calibration DRIVE_UNIT_CALIBRATION, then refers the amplitude back through the line attenuation.

    Args:
        cc (float): Drive coupling capacitance in farad
        c_sigma (float): Qubit capacitance in farad
        z (float): Qubit impedance to ground in ohm
        target_angle (float): Rotation angle in rad
        envelope (array_like): Peak-normalised envelope samples
        sample_period (float): Envelope sample period in seconds
        line_attenuation_db (float): Attenuation between the fridge input and the qubit in dB

    Returns:
        RabiBudget: Amplitude and power at the device and at the fridge input

    Raises:
        InputError: If the envelope is not peak-normalised, integrates to zero, or the attenuation is negative
    """
    envelope = np.asarray(envelope, dtype=float)
    if line_attenuation_db < 0:
        raise InputError("Line attenuation must be non-negative")
    if abs(np.max(np.abs(envelope)) - 1.) > 1e-6:
        raise InputError("Envelope must be normalised to unit peak amplitude")
    area = trapezoid(envelope, dx=sample_period)
    if area == 0:
        raise InputError("Envelope integrates to zero and cannot produce a rotation")

    rabi_per_volt = _raw_rabi_rate(cc, c_sigma, z) * DRIVE_UNIT_CALIBRATION
    v0 = abs(target_angle) / (rabi_per_volt * abs(area))
    power_dbm = watts_to_dbm(v0 ** 2 / (2. * LINE_IMPEDANCE))
    v_fridge = v0 * 10. ** (line_attenuation_db / 20.)
    return RabiBudget(v0, power_dbm, v_fridge, power_dbm + line_attenuation_db)


def coherence_budget(rates):
    """
    Combine independent decay channels into a total T1 limit.

    Args:
        rates (dict): Decay rate in 1/s keyed by channel name

    Returns:
        CoherenceBudget: Rows of (name, rate, T1 limit), the total rate and the overall T1 limit
    """
    rows = []
    for name, rate in rates.items():
        rows.append((name, float(rate), 1. / rate if rate > 0 else np.inf))
    total = float(sum(rates.values()))
    return CoherenceBudget(rows, total, 1. / total if total > 0 else np.inf)
