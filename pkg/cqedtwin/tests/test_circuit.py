"""
Tests for the closed-form circuit calculators.

Most properties are checked against the defining formulas written out independently here; the junction calculator is
also checked against the worked example of a 6 kOhm junction, which should come out near 8 nH.
"""
import numpy as np
import pytest
from hypothesis import given
from hypothesis.strategies import floats
from scipy.constants import e, h

from cqedtwin.circuit import GAP_RANGE_EV, PHI_0, ab_critical_current, critical_photon_number, dispersive_params, \
    flux_from_current, junction_from_resistance, oscillator_params, squid_effective_ej, steady_state_photons, \
    transmon_spectrum, tunable_transmon_frequency
from cqedtwin.errors import InputError

# Relative tolerance against closed forms
TOLERANCE = 1e-9


def lc_frequency(inductance, capacitance):
    """Oracle for the resonance frequency of an LC circuit in Hz"""
    return 1. / (2 * np.pi * np.sqrt(inductance * capacitance))


@given(inductance=floats(1e-10, 1e-7), capacitance=floats(1e-14, 1e-11))
def test_oscillator_params_anyLC_frequencyAndImpedanceMatch(inductance, capacitance):
    """Frequency and impedance follow 1/sqrt(LC) and sqrt(L/C)"""
    osc = oscillator_params(inductance, capacitance)
    assert osc.frequency == pytest.approx(lc_frequency(inductance, capacitance), rel=TOLERANCE)
    assert osc.impedance == pytest.approx(np.sqrt(inductance / capacitance), rel=TOLERANCE)


@given(inductance=floats(1e-10, 1e-7), capacitance=floats(1e-14, 1e-11))
def test_oscillator_params_anyLC_zeroPointProductIsHalf(inductance, capacitance):
    """phi_zpf n_zpf = 1/2 for every oscillator"""
    osc = oscillator_params(inductance, capacitance)
    assert osc.phi_zpf * osc.n_zpf == pytest.approx(0.5, rel=TOLERANCE)


@given(inductance=floats(1e-10, 1e-7), capacitance=floats(1e-14, 1e-11))
def test_oscillator_params_anyLC_energiesGiveFrequency(inductance, capacitance):
    """hbar omega = sqrt(8 EL EC) in frequency units"""
    osc = oscillator_params(inductance, capacitance)
    assert np.sqrt(8 * osc.e_l * osc.e_c) == pytest.approx(osc.frequency, rel=1e-6)


def test_oscillator_params_zeroCapacitance_raisesInputError():
    """Non-positive elements are rejected"""
    with pytest.raises(InputError):
        oscillator_params(1e-9, 0.)


@given(ec=floats(100e6, 400e6), ratio=floats(20., 100.))
def test_transmon_spectrum_transmonRegime_frequencyFormula(ec, ratio):
    """f01 = sqrt(8 EJ EC) - EC and the anharmonicity equals EC"""
    params = transmon_spectrum(ratio * ec, ec)
    assert params.frequency == pytest.approx(np.sqrt(8 * ratio) * ec - ec, rel=TOLERANCE)
    assert params.anharmonicity == ec
    assert params.valid


def test_transmon_spectrum_lowRatio_flaggedInvalid():
    """EJ/EC below 20 is flagged rather than rejected"""
    assert not transmon_spectrum(10e9, 1e9).valid


def test_transmon_spectrum_negativeEnergy_raisesInputError():
    """A non-positive energy is rejected"""
    with pytest.raises(InputError):
        transmon_spectrum(-1., 1.)


def test_squid_effective_ej_halfFluxQuantum_vanishes():
    """The SQUID is fully frustrated at half a flux quantum"""
    assert squid_effective_ej(20e9, np.pi) == pytest.approx(0., abs=1e-6)
    assert squid_effective_ej(20e9, 0.) == 20e9


@given(phi=floats(-np.pi, np.pi))
def test_tunable_transmon_frequency_anyFlux_belowSweetSpot(phi):
    """The sweet spot is the maximum of the tuning curve"""
    assert tunable_transmon_frequency(15e9, 250e6, phi) <= tunable_transmon_frequency(15e9, 250e6, 0.) + 1.


def test_flux_from_current_onePeriod_isTwoPi():
    """One period of bias current is one flux quantum"""
    assert flux_from_current(1.5e-3, 0.5e-3, 1e-3) == pytest.approx(2 * np.pi)


@given(g=floats(10e6, 150e6), delta=floats(0.8e9, 3e9), ec=floats(150e6, 350e6))
def test_dispersive_params_anyCoupling_formulas(g, delta, ec):
    """Lamb shift g^2/Delta, chi = 2 EC (g/Delta)^2 and Purcell rate 2 (g/Delta)^2 kappa"""
    kappa = 2 * np.pi * 1e6
    coupling = dispersive_params(g, 7e9 - delta, 7e9, ec, kappa)
    ratio = g / -delta
    assert coupling.lamb_shift == pytest.approx(-g ** 2 / delta, rel=TOLERANCE)
    assert coupling.chi == pytest.approx(2 * ec * ratio ** 2, rel=TOLERANCE)
    assert coupling.purcell_rate == pytest.approx(2 * ratio ** 2 * kappa, rel=TOLERANCE)
    assert np.tan(2 * coupling.theta) == pytest.approx(2 * g / -delta, rel=1e-6)


def test_dispersive_params_strongCoupling_flaggedInvalid():
    """|g/Delta| above 0.2 is flagged"""
    assert not dispersive_params(300e6, 6e9, 7e9, 250e6, 1e6).valid


def test_dispersive_params_resonant_raisesInputError():
    """A degenerate qubit and resonator have no dispersive regime"""
    with pytest.raises(InputError):
        dispersive_params(50e6, 7e9, 7e9, 250e6, 1e6)


def test_critical_photon_number_typical_quarterOfRatioSquared():
    """n_crit = Delta^2 / 4 g^2"""
    assert critical_photon_number(100e6, 1e9) == pytest.approx(25.)


@given(kappa_c=floats(1e5, 1e8), detuning=floats(-1e8, 1e8))
def test_steady_state_photons_detuning_lorentzianInDetuning(kappa_c, detuning):
    """Photon number falls off as a Lorentzian of half width kappa/2"""
    kappa = 1.2 * kappa_c
    on = steady_state_photons(1e4, kappa_c, kappa)
    off = steady_state_photons(1e4, kappa_c, kappa, detuning)
    assert off == pytest.approx(on / (1. + (2 * detuning / kappa) ** 2), rel=TOLERANCE)


def test_ab_critical_current_zeroTemperature_resistanceProduct():
    """Ic Rn = pi Delta / 2e at zero temperature"""
    gap = 180e-6
    assert ab_critical_current(gap, 1e3) * 1e3 == pytest.approx(np.pi * gap / 2., rel=TOLERANCE)


def test_ab_critical_current_finiteTemperature_reduced():
    """Thermal quasiparticles reduce the critical current"""
    assert ab_critical_current(180e-6, 1e3, temperature=1.) < ab_critical_current(180e-6, 1e3)


def test_junction_from_resistance_sixKiloOhm_nearEightNanohenry():
    """A 6 kOhm junction has an inductance of about 8 nH"""
    junction = junction_from_resistance(6e3)
    assert junction.lj == pytest.approx(8e-9, rel=0.05)


def test_junction_from_resistance_gapAndAgingRange_bracketEightNanohenry():
    """The spread of gap and aging factor brackets the 8 nH estimate"""
    low = junction_from_resistance(6e3, gap=GAP_RANGE_EV[1], aging_factor=1.1).lj
    high = junction_from_resistance(6e3, gap=GAP_RANGE_EV[0], aging_factor=1.2).lj
    assert low < 8e-9 < high


def test_junction_from_resistance_anyJunction_energyMatchesInductance():
    """EJ = (Phi0/2pi)^2 / LJ"""
    junction = junction_from_resistance(8e3)
    assert junction.ej * h == pytest.approx((PHI_0 / (2 * np.pi)) ** 2 / junction.lj, rel=TOLERANCE)
    assert PHI_0 == pytest.approx(h / (2 * e))


def test_junction_from_resistance_agingBelowOne_raisesInputError():
    """The cold resistance cannot be lower than the warm one"""
    with pytest.raises(InputError):
        junction_from_resistance(6e3, aging_factor=0.9)
