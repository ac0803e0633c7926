"""
Frequency domain calibration experiments: finding and characterising the readout resonator, locating the qubit, and
measuring its anharmonicity and dispersive shift.

The fitting functions work on plain arrays so they can be used on measured data as well as on simulated sweeps; the
experiment functions build SweepSpecs from ControlSettings and run them through a device's execute interface.
Frequencies are fitted relative to the centre of the sweep so that the solver's relative step is meaningful for a
line a few kHz wide sitting at several GHz.
"""
import logging
from collections import namedtuple
from dataclasses import replace

import numpy as np
from scipy.signal import find_peaks

from cqedtwin.device import ReadoutLine, hanger_s21
from cqedtwin.errors import FitError, InputError
from cqedtwin.numerics import least_squares_fit
from cqedtwin.simulator import SweepSpec
from cqedtwin.timedomain import gate_sequence

logger = logging.getLogger(__name__)

# A resonator sweep must span this many linewidths
MIN_LINEWIDTHS = 5.
# Smallest relative dip depth, and smallest multiple of the noise, that counts as a resonance
MIN_DIP_DEPTH = 0.02
DIP_NOISE_FACTOR = 5.
# Probe power for low power resonator sweeps, dBm at the generator
LOW_POWER_DBM = -130.
# A readout power is acceptable while the line moves by less than this fraction of its width
LINE_DISTORTION = 0.1
# A qubit line must stand this many residual standard deviations above the background
MIN_PEAK_SNR = 5.
# Accept a qubit line no wider than this many natural linewidths
MAX_BROADENING = 5.
DEFAULT_SPEC_RATES = 2 * np.pi * np.array([1e3, 3e3, 1e4, 3e4, 1e5, 3e5, 1e6, 3e6])
THREE_TONE_RATE = 2 * np.pi * 10e6

ResonatorFit = namedtuple('ResonatorFit', ['fit', 'frequency', 'kappa', 'kappa_c', 'kappa_i', 'q_c', 'q_i', 'line'])
PowerScan = namedtuple('PowerScan', ['dressed_frequency', 'bare_frequency', 'lamb_shift', 'suggested_power_dbm',
                                     'secondary_offset', 'powers', 'fits'])
FluxSweep = namedtuple('FluxSweep', ['sweet_spot_current', 'resonator_frequency', 'currents', 'frequencies',
                                     'period'])
QubitLine = namedtuple('QubitLine', ['frequency', 'half_width', 'snr', 'drive_rate', 'fit', 'broadened'])
Anharmonicity = namedtuple('Anharmonicity', ['anharmonicity', 'error', 'ridge_sum', 'profile', 'fit'])
DispersiveShift = namedtuple('DispersiveShift', ['chi', 'error', 'p_excited', 'fit', 'ground'])


def lorentzian(f, center, half_width, amplitude, offset):
    return offset + amplitude / (1. + ((np.asarray(f) - center) / half_width) ** 2)


def _shift_fit(fit, index, shift):
    """Move one fitted parameter back from relative to absolute frequency"""
    params = np.array(fit.params, dtype=float)
    params[index] += shift
    return replace(fit, params=params)


def fit_lorentzian(f, y):
    """
    Fit a Lorentzian peak.

    Returns:
        FitResult: Parameters center (Hz), half_width (Hz), amplitude and offset
    """
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    reference = 0.5 * (f[0] + f[-1])
    x = f - reference
    step = abs(f[1] - f[0]) if len(f) > 1 else 1.
    offset = float(np.median(y))
    peak = int(np.argmax(y))
    amplitude = float(y[peak] - offset)
    half_width = max(0.5 * step * np.count_nonzero(y - offset > 0.5 * amplitude), step)
    p0 = [x[peak], half_width, amplitude, offset]
    bounds = ([x[0] - abs(x[-1] - x[0]), 1e-3 * step, -np.inf, -np.inf], [x[-1] + abs(x[-1] - x[0]), np.inf, np.inf,
                                                                          np.inf])
    fit = least_squares_fit(lorentzian, x, y, p0, bounds=bounds,
                            names=('center', 'half_width', 'amplitude', 'offset'))
    return _shift_fit(fit, 0, reference)


def fit_resonator(f, s21):
    """
    Fit the transmission of a hanger resonator.

    The model is the line shape device.hanger_s21 produces: A (1 + slope (f - f_r)/f_r) times the Lorentzian dip
    1 - (kappa_c/kappa)/(1 + 2i (f - f_r)/kappa_hz), times exp(i(2 pi f tau + phi0)). Initial guesses come from the
    data: amplitude and electrical delay from the edges of the sweep, the resonance from the minimum of |S21| once
    the delay is removed, kappa from the 3 dB width of the dip and kappa_c from its depth.

    Args:
        f (array_like): Frequencies in Hz, increasing
        s21 (array_like): Complex transmission

    Returns:
        ResonatorFit: FitResult with names f_r, kappa, kappa_c, amplitude, slope, delay, phase, together with the
            derived internal loss rate and the quality factors Qc = 2 pi f_r/kappa_c and Qi = 2 pi f_r/kappa_i

    Raises:
        InputError: If the sweep spans fewer than MIN_LINEWIDTHS linewidths
        FitError: If there is no dip
    """
    f = np.asarray(f, dtype=float)
    s21 = np.asarray(s21, dtype=complex)
    if len(f) != len(s21) or len(f) < 16:
        raise InputError("Need at least 16 matching frequency and S21 points")
    reference = 0.5 * (f[0] + f[-1])
    span = f[-1] - f[0]
    x = f - reference

    # Amplitude and delay from the outer tenth on either side
    n_edge = max(len(f) // 10, 2)
    edges = np.r_[0:n_edge, len(f) - n_edge:len(f)]
    amplitude = float(np.median(np.abs(s21[edges])))
    phase = np.unwrap(np.angle(s21))
    phase_slope, phase_center = np.polyfit(x[edges], phase[edges], 1)
    normalised = s21 / (amplitude * np.exp(1j * (phase_slope * x + phase_center)))

    # Dip position, depth and width
    depth_profile = np.abs(1. - normalised) ** 2
    noise = float(np.std(np.abs(normalised[edges])))
    dip = int(np.argmax(depth_profile))
    depth = float(np.sqrt(depth_profile[dip]))
    if depth < max(MIN_DIP_DEPTH, DIP_NOISE_FACTOR * noise):
        raise FitError("No resonance dip found: depth " + str(depth) + " against noise " + str(noise))
    above = np.nonzero(depth_profile >= 0.5 * depth_profile[dip])[0]
    width_hz = max(f[above[-1]] - f[above[0]], abs(f[1] - f[0]))
    if span < MIN_LINEWIDTHS * width_hz:
        raise InputError("Sweep of " + str(span) + " Hz covers fewer than " + str(MIN_LINEWIDTHS)
                         + " linewidths of " + str(width_hz) + " Hz")
    kappa = 2 * np.pi * width_hz

    def model(xx, offset, kappa_, kappa_c, amplitude_, slope_per_span, phase_per_span, phase_):
        baseline = amplitude_ * (1. + slope_per_span * (xx - offset) / span)
        line = 1. - (kappa_c / kappa_) / (1. + 2j * (xx - offset) / (kappa_ / (2 * np.pi)))
        return baseline * line * np.exp(1j * (phase_per_span * xx / span + phase_))

    p0 = [x[dip], kappa, min(depth, 1.) * kappa, amplitude, 0., phase_slope * span, phase_center]
    lower = [x[0], 0., 0., 0., -np.inf, -np.inf, -np.inf]
    upper = [x[-1], np.inf, np.inf, np.inf, np.inf, np.inf, np.inf]
    raw = least_squares_fit(model, x, s21, p0, bounds=(lower, upper),
                            names=('offset', 'kappa', 'kappa_c', 'amplitude', 'slope_per_span', 'phase_per_span',
                                   'phase'))
    logger.debug("Resonator fit converged %s with parameters %s", raw.converged, raw.as_dict()['params'])

    # Back to the parameters of hanger_s21
    f_r = reference + raw['offset']
    delay = raw['phase_per_span'] / (2 * np.pi * span)
    transform = np.eye(7)
    transform[4, 4] = f_r / span
    transform[5, 5] = 1. / (2 * np.pi * span)
    transform[6, 5] = -reference / span
    params = transform @ raw.params
    params[0] = f_r
    covariance = transform @ raw.covariance @ transform.T
    fit = replace(raw, params=params, covariance=covariance,
                  names=('f_r', 'kappa', 'kappa_c', 'amplitude', 'slope', 'delay', 'phase'))
    kappa = float(fit['kappa'])
    kappa_c = float(fit['kappa_c'])
    kappa_i = kappa - kappa_c
    q_c = 2 * np.pi * f_r / kappa_c if kappa_c > 0 else np.inf
    q_i = 2 * np.pi * f_r / kappa_i if kappa_i > 0 else np.inf
    line = ReadoutLine(amplitude=float(fit['amplitude']), slope=float(fit['slope']), delay=delay,
                       phase=float(fit['phase']))
    return ResonatorFit(fit, f_r, kappa, kappa_c, kappa_i, q_c, q_i, line)


def _resonator_sweep(device, settings, rng, center, span, n_points, power_dbm, n_averages, prepulse=None,
                     powers=None):
    frequencies = np.linspace(center - 0.5 * span, center + 0.5 * span, n_points)
    axes = {'frequency': frequencies}
    if powers is not None:
        axes['power_dbm'] = np.asarray(powers, dtype=float)
    sweep_settings = {'power_dbm': power_dbm, 'flux_bias': settings.flux_bias}
    if prepulse is not None:
        sweep_settings['prepulse'] = prepulse
    result = device.execute(SweepSpec('s21', axes, sweep_settings, n_averages), rng=rng)
    return frequencies, result.data


def resonator_spectroscopy(device, settings, rng, span=20e6, n_points=801, power_dbm=LOW_POWER_DBM,
                           n_averages=1000):
    """
    Low power transmission sweep around the best known resonator frequency, fitted with fit_resonator.

    Returns:
        (ResonatorFit, np.ndarray, np.ndarray): The fit, the frequencies and the measured S21
    """
    center = settings.resonator_frequency or settings.resonator_guess
    if center is None:
        raise InputError("Need a resonator frequency or a design guess")
    f, s21 = _resonator_sweep(device, settings, rng, center, span, n_points, power_dbm, n_averages)
    return fit_resonator(f, s21), f, s21


def secondary_dip_offset(f, s21, fit):
    """
    Offset of a second, weaker dip next to the main resonance, as left by residual excited state population.

    Returns:
        float: Frequency of the secondary dip minus the main one, or None
    """
    normalised = s21 / hanger_s21(f, fit.frequency, fit.kappa, 0., fit.line)
    depth = 1. - np.abs(normalised)
    n_edge = max(len(f) // 10, 2)
    noise = float(np.std(np.r_[depth[:n_edge], depth[-n_edge:]]))
    step = abs(f[1] - f[0])
    spacing = max(int(0.5 * fit.kappa / (2 * np.pi) / step), 1)
    peaks, properties = find_peaks(depth, prominence=DIP_NOISE_FACTOR * noise + 1e-12, distance=spacing)
    if len(peaks) < 2:
        return None
    order = np.argsort(properties['prominences'])[::-1]
    main, secondary = peaks[order[0]], peaks[order[1]]
    return float(f[secondary] - f[main])


def resonator_power_scan(device, settings, rng, powers=None, span=40e6, n_points=801, n_averages=1000):
    """
    Resonator transmission against probe power.

    At low power the line sits at its dressed frequency; well above the critical photon number it jumps to the bare
    frequency. The scan fits every power, reports the Lamb shift bare minus dressed, suggests the highest readout
    power whose line has moved by less than LINE_DISTORTION of its width and kept its width within the same
    fraction, and looks for a secondary low power dip left by residual excited population.

    Args:
        device: Anything with the execute interface
        settings (ControlSettings): Needs the resonator frequency
        rng (RngStream): Source of randomness
        powers (array_like): Probe powers at the generator in dBm, increasing
        span (float): Sweep width in Hz, wide enough to hold both the dressed and the bare line
        n_points (int): Frequencies per sweep
        n_averages (int): Averages per point

    Returns:
        PowerScan: The frequencies, shift, suggested power and per-power fits

    Raises:
        FitError: If the line is still moving between the two highest powers, so the scan has not reached the bright
            state
    """
    settings.require('resonator_frequency')
    powers = np.arange(-140., -34., 5.) if powers is None else np.sort(np.asarray(powers, dtype=float))
    f, data = _resonator_sweep(device, settings, rng, settings.resonator_frequency, span, n_points, LOW_POWER_DBM,
                               n_averages, powers=powers)
    fits = []
    for power, row in zip(powers, data):
        try:
            fits.append(fit_resonator(f, row))
        except FitError:
            logger.debug("No resonator fit at %.1f dBm", power)
            fits.append(None)
    if fits[0] is None or fits[-1] is None:
        raise FitError("Resonator not found at the lowest or highest power")
    low = fits[0]
    width_hz = low.kappa / (2 * np.pi)
    if fits[-2] is not None and abs(fits[-1].frequency - fits[-2].frequency) > LINE_DISTORTION * width_hz:
        raise FitError("No crossover detected in range: the line still moves at the highest power")

    suggested = powers[0]
    for power, fit in zip(powers, fits):
        if fit is None:
            break
        moved = abs(fit.frequency - low.frequency) > LINE_DISTORTION * width_hz
        widened = abs(fit.kappa - low.kappa) > LINE_DISTORTION * low.kappa
        if moved or widened:
            break
        suggested = power

    secondary = secondary_dip_offset(f, data[0], low)
    lamb_shift = fits[-1].frequency - low.frequency
    logger.info("Power scan: dressed %.6f GHz, bare %.6f GHz, readout power %.1f dBm", low.frequency / 1e9,
                fits[-1].frequency / 1e9, suggested)
    return PowerScan(low.frequency, fits[-1].frequency, lamb_shift, float(suggested), secondary, powers, fits)


def resonator_flux_sweep(device, settings, rng, currents=None, span=30e6, n_points=601, n_averages=1000):
    """
    Resonator frequency against bias current, locating the qubit's sweet spot.

    With the qubit below the resonator the resonator is pushed up most when the qubit is closest, so the sweet spot
    is where the resonator frequency is highest. The maximum is refined with a parabola through its neighbours; when
    the sweep covers more than one period the maximum closest to zero bias is taken and the spacing of maxima gives
    the period.

    Returns:
        FluxSweep: The sweet spot current and the resonator frequency there
    """
    settings.require('resonator_frequency')
    if currents is None:
        if settings.flux_period_guess is None:
            raise InputError("Need a bias current grid or a design flux period")
        currents = np.linspace(-0.6, 0.6, 61) * settings.flux_period_guess
    currents = np.asarray(currents, dtype=float)
    frequencies = np.linspace(settings.resonator_frequency - 0.5 * span, settings.resonator_frequency + 0.5 * span,
                              n_points)
    spec = SweepSpec('resonator_flux', {'current': currents, 'frequency': frequencies},
                     {'power_dbm': LOW_POWER_DBM}, n_averages)
    data = np.abs(device.execute(spec, rng=rng).data)

    # Dip of every row, refined with a parabola through its neighbours
    step = frequencies[1] - frequencies[0]
    dips = []
    for row in data:
        k = int(np.clip(np.argmin(row), 1, len(row) - 2))
        curvature = row[k - 1] - 2 * row[k] + row[k + 1]
        shift = 0.5 * (row[k - 1] - row[k + 1]) / curvature if curvature > 0 else 0.
        dips.append(frequencies[k] + shift * step)
    dips = np.array(dips)

    floor = dips.min() - 1.
    maxima, _ = find_peaks(np.r_[floor, dips, floor])
    maxima = maxima - 1
    top = dips.max()
    candidates = [k for k in maxima if top - dips[k] < 2.5 * step]
    if not candidates:
        candidates = [int(np.argmax(dips))]
    best = min(candidates, key=lambda k: abs(currents[k]))
    period = float(np.median(np.diff(currents[candidates]))) if len(candidates) > 1 else None

    window = slice(max(best - 3, 0), min(best + 4, len(currents)))
    if window.stop - window.start >= 3:
        a, b, c = np.polyfit(currents[window], dips[window], 2)
        sweet = -b / (2 * a) if a < 0 else currents[best]
    else:
        sweet = currents[best]
    sweet = float(np.clip(sweet, currents[window][0], currents[window][-1]))
    logger.info("Sweet spot at %.4g A", sweet)
    return FluxSweep(sweet, float(dips[best]), currents, dips, period)


def _qubit_sweep(device, settings, rng, frequencies, drive_rate, n_averages):
    spec = SweepSpec('qubit_spectroscopy', {'frequency': frequencies},
                     {'drive_rate': float(drive_rate), 'flux_bias': settings.flux_bias}, n_averages)
    return device.execute(spec, rng=rng).data


def _line_quality(f, data, fit):
    residual = data - lorentzian(f, *fit.params)
    noise = max(float(np.std(residual)), 1e-12)
    snr = fit['amplitude'] / noise
    inside = f[0] <= fit['center'] <= f[-1]
    return snr, bool(fit.converged and inside and snr >= MIN_PEAK_SNR)


def two_tone_spectroscopy(device, settings, rng, span=200e6, drive_rates=None, n_points=401, n_averages=1000):
    """
    Find the qubit line with a power schedule.

    The coarse search steps up the drive rate over the whole span until a line with SNR of at least MIN_PEAK_SNR
    appears; at high power the line is broad enough to be seen on a coarse grid. The search then zooms in and steps
    the power back down while the line stays visible, until its half width is within MAX_BROADENING natural widths,
    natural being 1/(2 pi T2) for the design T2.

    Args:
        device: Anything with the execute interface
        settings (ControlSettings): Needs the readout calibrated and a qubit frequency or design guess
        rng (RngStream): Source of randomness
        span (float): Search span in Hz
        drive_rates (array_like): Increasing Rabi rates in rad/s
        n_points (int): Frequencies per sweep
        n_averages (int): Shots per point

    Returns:
        QubitLine: The line centre, half width and the drive it was measured at; broadened is set when the narrowest
            visible line is still wider than MAX_BROADENING natural widths

    Raises:
        FitError: If no line is found in the span at any power
    """
    center = settings.qubit_frequency or settings.qubit_guess
    if center is None:
        raise InputError("Need a qubit frequency or a design guess")
    rates = DEFAULT_SPEC_RATES if drive_rates is None else np.sort(np.asarray(drive_rates, dtype=float))
    natural = 1. / (2 * np.pi * settings.t2_guess)

    found = None
    grid = np.linspace(center - 0.5 * span, center + 0.5 * span, n_points)
    for index, rate in enumerate(rates):
        data = _qubit_sweep(device, settings, rng.child(index), grid, rate, n_averages)
        fit = fit_lorentzian(grid, data)
        snr, ok = _line_quality(grid, data, fit)
        logger.debug("Qubit search at %.3g rad/s: snr %.1f, accepted %s", rate, snr, ok)
        if ok:
            found = index
            break
    if found is None:
        raise FitError("No qubit line in span at any power")

    best = QubitLine(float(fit['center']), float(fit['half_width']), float(snr), float(rate), fit, True)
    resolution = grid[1] - grid[0]
    for index in range(found, -1, -1):
        zoom_span = max(10 * best.half_width, 20 * natural, 4 * resolution)
        zoom = np.linspace(best.frequency - 0.5 * zoom_span, best.frequency + 0.5 * zoom_span, n_points)
        resolution = zoom[1] - zoom[0]
        data = _qubit_sweep(device, settings, rng.child(len(rates) + index), zoom, rates[index], n_averages)
        fit = fit_lorentzian(zoom, data)
        snr, ok = _line_quality(zoom, data, fit)
        if not ok:
            break
        broadened = fit['half_width'] > MAX_BROADENING * natural
        best = QubitLine(float(fit['center']), float(fit['half_width']), float(snr), float(rates[index]), fit,
                         bool(broadened))
        if not broadened:
            break
    logger.info("Qubit line at %.6f GHz, half width %.3g Hz", best.frequency / 1e9, best.half_width)
    return best


def three_tone_anharmonicity(device, settings, rng, max_anharmonicity=None, step=1e6, drive_rate=THREE_TONE_RATE,
                             n_averages=1000):
    """
    Anharmonicity from the two-photon ridge of a two-tone map.

    Both tones are swept below the qubit frequency. Each alone excites the 0-1 line; together they drive the 0-2
    transition wherever f1 + f2 = f01 + f12, a ridge of slope -1. The single tone background of every point is
    rebuilt from row and column medians, the excess averaged along each anti-diagonal, and a Lorentzian fitted to
    that profile locates the ridge; alpha = 2 f01 - (f1 + f2).

    Returns:
        Anharmonicity: alpha and its uncertainty in Hz, the ridge position and the anti-diagonal profile

    Raises:
        FitError: If no ridge stands out of the background
    """
    settings.require('qubit_frequency')
    f01 = settings.qubit_frequency
    if max_anharmonicity is None:
        max_anharmonicity = 1.6 * settings.anharmonicity_guess
    axis = np.arange(f01 - max_anharmonicity, f01 + 20e6 + 0.5 * step, step)
    spec = SweepSpec('three_tone', {'frequency_1': axis, 'frequency_2': axis},
                     {'drive_rate_1': drive_rate, 'drive_rate_2': drive_rate, 'flux_bias': settings.flux_bias},
                     n_averages)
    data = device.execute(spec, rng=rng).data

    # Excess over the single tone background
    rows = np.median(data, axis=1)
    columns = np.median(data, axis=0)
    background = 1. - np.outer(1. - rows, 1. - columns)
    excess = data - background

    n = len(axis)
    sums = 2 * axis[0] + step * np.arange(2 * n - 1)
    flipped = excess[:, ::-1]
    profile = np.array([np.mean(np.diagonal(flipped, offset=(n - 1) - k)) for k in range(2 * n - 1)])

    noise = 1.4826 * float(np.median(np.abs(profile - np.median(profile))))
    peak = int(np.argmax(profile))
    if profile[peak] - np.median(profile) < MIN_PEAK_SNR * max(noise, 1. / np.sqrt(n_averages * n)):
        raise FitError("No two-photon ridge found")
    window = slice(max(peak - 10, 0), min(peak + 11, len(profile)))
    fit = fit_lorentzian(sums[window], profile[window])
    ridge = float(fit['center']) if fit.converged else float(sums[peak])
    error = float(fit.error('center')) if fit.converged else step
    alpha = 2 * f01 - ridge
    logger.info("Anharmonicity %.2f MHz", alpha / 1e6)
    return Anharmonicity(alpha, error, ridge, (sums, profile), fit)


def dispersive_shift(device, settings, rng, span=20e6, n_points=801, n_averages=1000):
    """
    Dispersive shift from resonator sweeps with the qubit in the ground state and after a pi pulse.

    The ground state sweep fixes the line; the excited state sweep is fitted as the mixture
    (1 - p) S21(f_r) + p S21(f_r + chi) with only chi and p free.

    Returns:
        DispersiveShift: chi and its uncertainty in Hz, the excited fraction p, the mixture fit and the ground fit
    """
    settings.require('resonator_frequency', 'pi_amplitude')
    ground_rng, excited_rng = rng.child(0), rng.child(1)
    f, s21_g = _resonator_sweep(device, settings, ground_rng, settings.resonator_frequency, span, n_points,
                                LOW_POWER_DBM, n_averages)
    ground = fit_resonator(f, s21_g)
    prepulse = gate_sequence(settings, ['X'], n_readouts=0)
    _, s21_e = _resonator_sweep(device, settings, excited_rng, settings.resonator_frequency, span, n_points,
                                LOW_POWER_DBM, n_averages, prepulse=prepulse)

    width_hz = ground.kappa / (2 * np.pi)
    depth = np.abs(1. - s21_e / hanger_s21(f, ground.frequency, ground.kappa, 0., ground.line))
    chi_guess = float(f[int(np.argmax(depth))] - ground.frequency)
    if abs(chi_guess) < 0.25 * width_hz:
        chi_guess = width_hz

    def mixture(ff, chi, p_excited):
        return ((1. - p_excited) * hanger_s21(ff, ground.frequency, ground.kappa, ground.kappa_c, ground.line)
                + p_excited * hanger_s21(ff, ground.frequency + chi, ground.kappa, ground.kappa_c, ground.line))

    fit = least_squares_fit(mixture, f, s21_e, [chi_guess, 0.9], bounds=([-np.inf, 0.], [np.inf, 1.]),
                            names=('chi', 'p_excited'))
    logger.info("Dispersive shift %.4g MHz with excited fraction %.3f", fit['chi'] / 1e6, fit['p_excited'])
    return DispersiveShift(float(fit['chi']), float(fit.error('chi')), float(fit['p_excited']), fit, ground)
