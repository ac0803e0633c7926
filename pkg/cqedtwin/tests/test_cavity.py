"""
Tests for the bosonic mode characterisation.

Coherent states give closed forms for the number split spectrum, the Ramsey collapse and revival, the Wigner function
and the parity, which serve as oracles for the density matrix protocols.
"""
import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis.strategies import floats

from cqedtwin.cavity import CavityMode, annihilation, cavity_t1_experiment, cavity_t2_experiment, coherent_state, \
    displacement, fit_number_splitting, fock_state, number_splitting_spectrum, parity_map_and_measure, \
    parity_operator, ramsey_revival, ramsey_revival_joint, revival_time, selective_pi, wigner_point, wigner_scan, \
    write_wigner
from cqedtwin.errors import CalibrationError, InputError
from cqedtwin.numerics import RngStream

EPSILON = 1e-8
CHI = 1e6


@pytest.fixture
def mode():
    return CavityMode(chi=CHI, linewidth=50e3)


def coherent_wigner(alpha, beta):
    """Oracle: the Wigner function of |beta> is a Gaussian of width 1/2 about beta"""
    return 2. / np.pi * np.exp(-2. * np.abs(alpha - beta) ** 2)


def coherent_parity(beta):
    """Oracle: probability of even photon number in |beta>"""
    return 0.5 * (1. + np.exp(-2. * np.abs(beta) ** 2))


@given(beta=floats(0., 2.5))
def test_coherent_state_photonNumber_isBetaSquared(beta):
    """<n> of |beta> is |beta|^2 on the default truncation"""
    rho = coherent_state(beta)
    a = annihilation(len(rho))
    assert np.real(np.trace(a.conj().T @ a @ rho)) == pytest.approx(beta ** 2, abs=1e-6)


def test_displacement_beyondGuard_raisesInputError():
    """|alpha|^2 of a quarter of the truncation is refused"""
    with pytest.raises(InputError):
        displacement(3., 32)


def test_displacement_withinGuard_isUnitary():
    """Displacements well inside the truncation are unitary to high accuracy on the low levels"""
    D = displacement(1. + 0.5j, 32)
    assert np.allclose((D.conj().T @ D)[:10, :10], np.eye(10), atol=1e-6)


def test_selective_pi_outsideTruncation_raisesInputError():
    """The conditioning photon number must be a level of the truncation"""
    with pytest.raises(InputError):
        selective_pi(32, 32)


def test_number_splitting_spectrum_unresolved_raisesInputError():
    """Lines closer than a few ancilla linewidths cannot be split"""
    with pytest.raises(InputError):
        number_splitting_spectrum(1., np.linspace(4.99e9, 5.01e9, 101), CavityMode(chi=100e3, linewidth=50e3))


def test_fit_number_splitting_coherentState_recoversChiAndPhotons(mode):
    """The comb fit returns chi, the vacuum line and the Poisson mean"""
    beta = 1.5
    f = mode.qubit_frequency + np.arange(-8.5 * CHI, 1. * CHI, 5e3)
    result = fit_number_splitting(f, number_splitting_spectrum(beta, f, mode))
    assert result.chi == pytest.approx(CHI, rel=1e-3)
    assert result.qubit_frequency == pytest.approx(mode.qubit_frequency, abs=1e3)
    assert result.mean_photons == pytest.approx(beta ** 2, rel=0.02)


def test_fit_number_splitting_nearVacuum_raisesCalibrationError(mode):
    """A single line gives no spacing"""
    f = mode.qubit_frequency + np.arange(-3 * CHI, CHI, 5e3)
    with pytest.raises(CalibrationError):
        fit_number_splitting(f, number_splitting_spectrum(0.01, f, mode))


@pytest.mark.parametrize('t', [0., 0.1e-6, 0.37e-6, 0.5e-6, 1e-6])
def test_ramsey_revival_joint_noKerr_matchesClosedForm(mode, t):
    """Evolving the joint state reproduces the collapse and revival formula"""
    beta = 1.5
    assert ramsey_revival_joint(beta, t, mode)[0] == pytest.approx(ramsey_revival(beta, t, CHI), abs=1e-6)


def test_revival_time_closedForm_isInverseChi():
    """The first full revival comes after 1/chi"""
    t = np.linspace(0., 1.5 / CHI, 301)
    assert revival_time(t, ramsey_revival(1.5, t, CHI)) == pytest.approx(1. / CHI, rel=1e-3)


def test_revival_time_kerr_revivalStillNearInverseChi():
    """A weak self-Kerr leaves the revival close to 1/chi"""
    mode = CavityMode(chi=CHI, kerr=1e3, n_levels=24)
    t = np.linspace(0., 1.5 / CHI, 151)
    assert revival_time(t, ramsey_revival_joint(1.5, t, mode)) == pytest.approx(1. / CHI, rel=0.02)


def test_revival_time_weakCoherentState_raisesCalibrationError():
    """Without photons the Ramsey signal never collapses"""
    t = np.linspace(0., 1.5 / CHI, 151)
    with pytest.raises(CalibrationError):
        revival_time(t, ramsey_revival(0.1, t, CHI))


def test_cavity_t1_experiment_exact_recoversLifetime():
    """The vacuum probability of a decaying coherent state gives 1/kappa"""
    mode = CavityMode(chi=CHI, kappa=1e3)
    result = cavity_t1_experiment(mode, 2.5, np.linspace(0., 6e-3, 61))
    assert result.time == pytest.approx(1e-3, rel=1e-3)


def test_cavity_t1_experiment_sampled_recoversLifetime():
    """Binomial sampling keeps the lifetime within a few percent"""
    mode = CavityMode(chi=CHI, kappa=1e3)
    result = cavity_t1_experiment(mode, 2.5, np.linspace(0., 6e-3, 61), RngStream(3), n_shots=20000)
    assert result.time == pytest.approx(1e-3, rel=0.05)


def test_cavity_t1_experiment_fewPhotons_raisesInputError():
    """The protocol needs a well displaced initial state"""
    with pytest.raises(InputError):
        cavity_t1_experiment(CavityMode(chi=CHI, kappa=1e3), 1., np.linspace(0., 6e-3, 61))


def test_cavity_t1_experiment_shortGrid_raisesCalibrationError():
    """A grid ending before two lifetimes is flagged"""
    with pytest.raises(CalibrationError):
        cavity_t1_experiment(CavityMode(chi=CHI, kappa=1e3), 2.5, np.linspace(0., 1e-3, 31))


def test_cavity_t2_experiment_lossAndDephasing_combineAsRates():
    """1/T2 = kappa/2 + gamma_phi"""
    mode = CavityMode(chi=CHI, kappa=1e3, gamma_phi=500.)
    result = cavity_t2_experiment(mode, np.linspace(0., 5e-3, 51))
    assert result.time == pytest.approx(1e-3, rel=1e-3)


def test_cavity_t2_experiment_lossOnly_isTwiceT1():
    """Without dephasing the cavity T2 is 2/kappa"""
    result = cavity_t2_experiment(CavityMode(chi=CHI, kappa=1e3), np.linspace(0., 10e-3, 51))
    assert result.time == pytest.approx(2e-3, rel=1e-3)


@pytest.mark.parametrize('n, parity', [(0, 1), (1, -1), (2, 1), (3, -1)])
def test_parity_map_and_measure_fockStates_deterministic(n, parity):
    """Fock states have a definite parity"""
    outcome = parity_map_and_measure(fock_state(n, 8), RngStream(1))
    assert outcome.parity == parity
    assert outcome.p_even == pytest.approx(1. if parity == 1 else 0., abs=EPSILON)


def test_parity_map_and_measure_coherentState_projectsOntoParityEigenstate():
    """The post measurement state of |beta> is a cat of the measured parity"""
    beta = 1.
    outcome = parity_map_and_measure(coherent_state(beta, 16), RngStream(5))
    assert outcome.p_even == pytest.approx(coherent_parity(beta), abs=1e-6)
    expectation = np.real(np.trace(parity_operator(16) @ outcome.state))
    assert expectation == pytest.approx(outcome.parity, abs=1e-6)
    assert np.real(np.trace(outcome.state)) == pytest.approx(1.)


def test_parity_map_and_measure_repeated_sameOutcome():
    """Parity measurement is QND: repeating it agrees"""
    first = parity_map_and_measure(coherent_state(1., 16), RngStream(8))
    second = parity_map_and_measure(first.state, RngStream(9))
    assert second.parity == first.parity
    assert abs(second.p_even - (1. if first.parity == 1 else 0.)) < 1e-6


@pytest.mark.parametrize('n, value', [(0, 2. / np.pi), (1, -2. / np.pi)])
def test_wigner_point_fockStates_originValue(n, value):
    """W(0) of |n> is (-1)^n 2/pi"""
    assert wigner_point(fock_state(n, 16), 0.) == pytest.approx(value)


def test_wigner_scan_coherentState_matchesGaussian():
    """The displaced parity scan of |beta> is the coherent Gaussian"""
    beta = 0.8 + 0.3j
    grid = np.add.outer(np.linspace(-1.5, 1.5, 7), 1j * np.linspace(-1.5, 1.5, 7))
    wigner = wigner_scan(coherent_state(beta), grid)
    assert wigner.shape == (7, 7)
    assert np.allclose(wigner, coherent_wigner(grid, beta), atol=1e-6)


def test_wigner_scan_threads_matchSerial():
    """Threaded evaluation returns the same grid"""
    grid = np.linspace(-1., 1., 9) + 0.2j
    rho = coherent_state(0.5)
    assert np.allclose(wigner_scan(rho, grid, processes=3), wigner_scan(rho, grid))


def test_wigner_scan_gridBeyondGuard_raisesInputError():
    """Grid points that leave the truncation are refused"""
    with pytest.raises(InputError):
        wigner_scan(fock_state(0, 16), np.array([0., 2.5]))


def test_write_wigner_csv_hasColumnsAndMetadata(tmp_path):
    """Wigner maps are written as a grid of (re_alpha, im_alpha, wigner)"""
    grid = np.array([0., 0.5, 1j])
    wigner = wigner_scan(fock_state(0, 16), grid)
    path = tmp_path / 'wigner.csv'
    write_wigner(str(path), grid, wigner, {'state': 'vacuum'})
    assert path.read_text().startswith('# state: "vacuum"')
    frame = pd.read_csv(path, comment='#')
    assert list(frame.columns) == ['re_alpha', 'im_alpha', 'wigner']
    assert np.allclose(frame['wigner'], wigner)
