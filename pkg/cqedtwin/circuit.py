"""
Closed-form calculators for the Hamiltonian parameters of the circuit elements a cQED device is built from: linear
resonators, transmons, SQUIDs, Josephson junctions, and the dispersive coupling between a transmon and a resonator.

Energies are kept in frequency units (E/h, in Hz) throughout. Angular frequencies only appear where a quantity is
naturally a rate, such as the oscillator frequency omega or a decay rate.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.constants import e, h, hbar, k as k_B

from cqedtwin.errors import InputError

logger = logging.getLogger(__name__)

# Magnetic flux quantum h/2e
PHI_0 = h / (2 * e)
# Reduced resistance quantum for Cooper pairs, hbar/(2e)^2 (about 1.027 kOhm)
R_Q = hbar / (2 * e) ** 2

# Below this EJ/EC ratio the perturbative transmon formulas are flagged
TRANSMON_REGIME_RATIO = 20.
# Above this |g/Delta| the dispersive formulas are flagged
DISPERSIVE_LIMIT = 0.2
# Typical superconducting gap of thin aluminium films, and the range it is usually quoted in
DEFAULT_GAP_EV = 180e-6
GAP_RANGE_EV = (150e-6, 200e-6)
# Junction resistance grows by 10-20% between room temperature and the fridge; take the midpoint
DEFAULT_AGING_FACTOR = 1.15


@dataclass(frozen=True)
class Oscillator:
    """
    A linear LC oscillator.

    Vars:
        inductance (float): L in henry
        capacitance (float): C in farad
        omega (float): Angular frequency 1/sqrt(LC) in rad/s
        impedance (float): Characteristic impedance sqrt(L/C) in ohm
        phi_zpf (float): Zero point fluctuations of the reduced flux
        n_zpf (float): Zero point fluctuations of the Cooper pair number
        e_c (float): Charging energy e^2/2C in Hz
        e_l (float): Inductive energy (Phi0/2pi)^2/L in Hz
    """
    inductance: float
    capacitance: float
    omega: float
    impedance: float
    phi_zpf: float
    n_zpf: float
    e_c: float
    e_l: float

    @property
    def frequency(self):
        return self.omega / (2 * np.pi)


@dataclass(frozen=True)
class TransmonParams:
    """
    Perturbative transmon parameters.

    Vars:
        ej (float): Josephson energy in Hz
        ec (float): Charging energy in Hz
        omega (float): Angular 0-1 transition frequency in rad/s
        anharmonicity (float): f01 - f12 in Hz
        phi_zpf (float): Zero point fluctuations of the junction phase, (2EC/EJ)^(1/4)
        valid (bool): Whether EJ/EC is deep enough in the transmon regime for the formulas to hold
    """
    ej: float
    ec: float
    omega: float
    anharmonicity: float
    phi_zpf: float
    valid: bool

    @property
    def frequency(self):
        return self.omega / (2 * np.pi)


@dataclass(frozen=True)
class DispersiveCoupling:
    """
    Dispersive-regime parameters of a transmon coupled to a resonator. Frequencies are in Hz, rates in 1/s.

    Vars:
        g (float): Coupling strength
        delta (float): Qubit-resonator detuning omega_T - omega_R
        theta (float): Mixing angle in rad
        lamb_shift (float): g^2/Delta
        purcell_rate (float): Qubit decay through the resonator
        chi (float): Dispersive shift
        kerr (float): Resonator self-Kerr
        kappa (float): Resonator decay rate
        valid (bool): Whether |g/Delta| is small enough for the dispersive approximation
    """
    g: float
    delta: float
    theta: float
    lamb_shift: float
    purcell_rate: float
    chi: float
    kerr: float
    kappa: float
    valid: bool


@dataclass(frozen=True)
class JunctionParams:
    """
    A Josephson junction characterised from its room temperature resistance.

    Vars:
        r_normal (float): Room temperature resistance in ohm
        gap (float): Superconducting gap in eV
        aging_factor (float): Ratio of the cold normal-state resistance to the room temperature one
        ej (float): Josephson energy in Hz
        lj (float): Josephson inductance in henry
        ic (float): Critical current in ampere
    """
    r_normal: float
    gap: float
    aging_factor: float
    ej: float
    lj: float
    ic: float


def _require_positive(**values):
    for name, value in values.items():
        if not value > 0:
            raise InputError(name + " must be positive, got " + str(value))


def oscillator_params(inductance, capacitance):
    """
    Compute the parameters of an LC oscillator.

    Args:
        inductance (float): L in henry
        capacitance (float): C in farad

    Returns:
        Oscillator: The oscillator parameters

    Raises:
        InputError: If either input is not positive
    """
    _require_positive(inductance=inductance, capacitance=capacitance)
    omega = 1. / np.sqrt(inductance * capacitance)
    impedance = np.sqrt(inductance / capacitance)
    phi_zpf = np.sqrt(impedance / (2 * R_Q))
    n_zpf = np.sqrt(R_Q / (2 * impedance))
    e_c = e ** 2 / (2 * capacitance) / h
    e_l = (PHI_0 / (2 * np.pi)) ** 2 / inductance / h
    return Oscillator(inductance, capacitance, omega, impedance, phi_zpf, n_zpf, e_c, e_l)


def transmon_spectrum(ej, ec):
    """
    Compute the transmon frequency and anharmonicity from its Josephson and charging energies.

    Args:
        ej (float): Josephson energy in Hz
        ec (float): Charging energy in Hz

    Returns:
        TransmonParams: The transmon parameters, flagged invalid if EJ/EC < 20

    Raises:
        InputError: If either energy is not positive
    """
    _require_positive(ej=ej, ec=ec)
    frequency = np.sqrt(8 * ej * ec) - ec
    valid = ej / ec >= TRANSMON_REGIME_RATIO
    if not valid:
        logger.warning("EJ/EC = %.1f is outside the transmon regime", ej / ec)
    return TransmonParams(ej, ec, 2 * np.pi * frequency, ec, (2 * ec / ej) ** 0.25, valid)


def squid_effective_ej(ej_sum, phi_ex):
    """
    Effective Josephson energy of a symmetric SQUID threaded by a reduced external flux phi_ex = 2 pi Phi/Phi0.

    Args:
        ej_sum (float): Sum of the two junction energies in Hz
        phi_ex (float): Reduced external flux in rad

    Returns:
        float: EJ_sum |cos(phi_ex/2)| in Hz
    """
    _require_positive(ej_sum=ej_sum)
    return ej_sum * np.abs(np.cos(np.asarray(phi_ex) / 2.))


def flux_from_current(current, sweet_spot_current, period):
    """Reduced flux threading a SQUID biased with a current, given the current that produces one flux quantum"""
    return 2 * np.pi * (np.asarray(current) - sweet_spot_current) / period


def tunable_transmon_frequency(ej_sum, ec, phi_ex):
    """
    0-1 frequency in Hz of a flux tunable transmon, clipped at zero near full frustration.

    Args:
        ej_sum (float): Maximum Josephson energy in Hz
        ec (float): Charging energy in Hz
        phi_ex (float or np.ndarray): Reduced flux in rad
    """
    ej = squid_effective_ej(ej_sum, phi_ex)
    return np.clip(np.sqrt(8 * ej * ec) - ec, 0., None)


def dispersive_params(g, omega_t, omega_r, ec, kappa):
    """
    Dispersive-regime parameters of a transmon-resonator pair.

    Args:
        g (float): Coupling in Hz
        omega_t (float): Transmon frequency in Hz
        omega_r (float): Resonator frequency in Hz
        ec (float): Transmon charging energy in Hz
        kappa (float): Resonator decay rate in 1/s

    Returns:
        DispersiveCoupling: The coupling parameters, flagged invalid if |g/Delta| > 0.2

    Raises:
        InputError: If the transmon and resonator are degenerate
    """
    delta = omega_t - omega_r
    if delta == 0:
        raise InputError("Transmon and resonator are resonant; the dispersive regime is undefined")
    ratio = g / delta
    valid = abs(ratio) <= DISPERSIVE_LIMIT
    if not valid:
        logger.warning("|g/Delta| = %.3f is outside the dispersive regime", abs(ratio))
    return DispersiveCoupling(g=g, delta=delta, theta=0.5 * np.arctan(2 * g / delta), lamb_shift=g ** 2 / delta,
                              purcell_rate=2 * ratio ** 2 * kappa, chi=2 * ec * ratio ** 2, kerr=ec * ratio ** 4,
                              kappa=kappa, valid=valid)


def critical_photon_number(g, delta):
    """Photon number Delta^2/4g^2 above which the dispersive approximation breaks down"""
    _require_positive(g=abs(g))
    return delta ** 2 / (4 * g ** 2)


def steady_state_photons(drive, kappa_c, kappa, detuning=0.):
    """
    Mean intracavity photon number for a stiff classical drive.

    Args:
        drive (complex): Input field amplitude in sqrt(photons/s)
        kappa_c (float): Coupling rate of the drive port in 1/s
        kappa (float): Total decay rate in 1/s
        detuning (float): Drive detuning from the resonator in rad/s
    """
    return kappa_c * np.abs(drive) ** 2 / (detuning ** 2 + kappa ** 2 / 4.)


def ab_critical_current(gap, resistance, temperature=0.):
    """
    Ambegaokar-Baratoff critical current of a tunnel junction.

    Ic Rn = (pi Delta / 2e) tanh(Delta / 2 kB T); the tanh factor is exactly one at zero temperature.

    Args:
        gap (float): Superconducting gap in eV
        resistance (float): Normal-state resistance in ohm
        temperature (float): Temperature in kelvin

    Returns:
        float: The critical current in ampere
    """
    _require_positive(gap=gap, resistance=resistance)
    thermal_factor = 1. if temperature <= 0 else np.tanh(gap * e / (2 * k_B * temperature))
    # With the gap in eV, pi Delta / 2e is simply pi/2 times the gap in volts
    return np.pi * gap / (2 * resistance) * thermal_factor


def junction_from_resistance(r_normal, gap=DEFAULT_GAP_EV, aging_factor=DEFAULT_AGING_FACTOR, temperature=0.):
    """
    Predict the Josephson parameters of a junction from its room temperature resistance.

    Args:
        r_normal (float): Room temperature resistance in ohm
        gap (float): Superconducting gap in eV
        aging_factor (float): Cold-to-warm resistance ratio, at least one
        temperature (float): Temperature at which to evaluate the critical current, in kelvin

    Returns:
        JunctionParams: The junction parameters

    Raises:
        InputError: If any input is out of range
    """
    _require_positive(r_normal=r_normal, gap=gap)
    if aging_factor < 1:
        raise InputError("aging_factor must be at least 1, got " + str(aging_factor))
    ic = ab_critical_current(gap, aging_factor * r_normal, temperature)
    lj = PHI_0 / (2 * np.pi * ic)
    ej = PHI_0 * ic / (2 * np.pi) / h
    return JunctionParams(r_normal, gap, aging_factor, ej, lj, ic)
