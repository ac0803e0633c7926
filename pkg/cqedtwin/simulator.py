"""
The virtual device behind the execute interface the calibration pipeline talks to.

A VirtualDevice accepts either a PulseSequence, which it runs shot by shot and answers with one ShotBatch (or
averaged Trace) per acquiring readout, or a SweepSpec for the continuous-wave and analytic experiments (resonator and
qubit spectroscopy, three-tone maps, flux sweeps, the residual ZZ echo and the mixer spectrum). A hardware driver
would implement the same two calls.

Sequences are propagated with superoperators. Every driven stretch of samples becomes the ordered product of exact
propagators of its piecewise constant Liouvillians, every idle stretch a single matrix exponential; both are cached,
so sweeps that repeat a pulse pay for it once. Between acquisitions the state is kept per shot: after a measurement
each shot continues from the classical state it was left in.
"""
import hashlib
import logging
import threading
from collections import namedtuple
from dataclasses import dataclass, field, replace
from functools import partial
from multiprocessing.pool import ThreadPool

import numpy as np
import scipy.linalg

from cqedtwin import numerics
from cqedtwin.device import (DEFAULT_LEVELS, FLUX, QUBIT, READOUT, ReadoutLine, Trace, acquire_shots, boxcar_weights,
                             collapse_operators, measurement_phase_factor, mixer_output_spectrum, noise_density,
                             qubit_hamiltonians, qubit_spectroscopy_response, readout_trajectory, s21_response,
                             sequence_controls, thermal_state)
from cqedtwin.errors import InputError
from cqedtwin.numerics import RngStream

logger = logging.getLogger(__name__)

SWEEP_KINDS = ('s21', 'qubit_spectroscopy', 'three_tone', 'resonator_flux', 'zz_echo', 'mixer_spectrum')
# Relative noise of a single S21 measurement
DEFAULT_S21_NOISE = 0.05
# Noise floor of the spectrum analyser relative to the desired sideband
DEFAULT_SPECTRUM_FLOOR = 1e-13

SweepResult = namedtuple('SweepResult', ['kind', 'axes', 'data', 'metadata'])


@dataclass(frozen=True)
class SweepSpec:
    """
    A continuous-wave or analytic experiment.

    Vars:
        kind (str): One of SWEEP_KINDS
        axes (dict): Swept quantities by name, each a 1-D array
        settings (dict): Fixed settings of the experiment
        n_averages (int): Number of averages (or shots) per point
    """
    kind: str
    axes: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    n_averages: int = 1000

    def __post_init__(self):
        if self.kind not in SWEEP_KINDS:
            raise InputError("Unknown sweep kind " + repr(self.kind))
        if self.n_averages < 1:
            raise InputError("n_averages must be at least one")


def _fingerprint(*arrays):
    digest = hashlib.sha1()
    for array in arrays:
        digest.update(np.ascontiguousarray(array).tobytes())
    return digest.hexdigest()


def _subspace_rotation(angle, phase, n_levels):
    """Ideal rotation by angle about cos(phase) x + sin(phase) y on levels 0 and 1, identity above"""
    U = np.eye(n_levels, dtype=complex)
    c, s = np.cos(angle / 2.), np.sin(angle / 2.)
    U[0, 0] = U[1, 1] = c
    U[0, 1] = -1j * s * np.exp(-1j * phase)
    U[1, 0] = -1j * s * np.exp(1j * phase)
    return U


class VirtualDevice(object):
    """
    A simulated device built around a hidden GroundTruth.

    Args:
        ground_truth (GroundTruth): The device parameters
        line (ReadoutLine): The measurement chain
        n_levels (int): Transmon truncation
        s21_noise (float): Relative noise of a single transmission measurement
        spectrum_floor (float): Relative noise floor of mixer spectrum measurements
        processes (int): Worker threads execute_many uses by default
    """

    def __init__(self, ground_truth, line=None, n_levels=DEFAULT_LEVELS, s21_noise=DEFAULT_S21_NOISE,
                 spectrum_floor=DEFAULT_SPECTRUM_FLOOR, processes=1):
        self.ground_truth = ground_truth
        self.line = line if line is not None else ReadoutLine()
        self.n_levels = n_levels
        self.s21_noise = s21_noise
        self.spectrum_floor = spectrum_floor
        self.processes = processes
        self._lock = threading.Lock()
        self._superoperators = {}
        self._trajectories = {}

    def inject_frequency_offset(self, offset):
        """Shift the hidden qubit frequency by offset Hz, as slow drift would"""
        gt = self.ground_truth
        with self._lock:
            self.ground_truth = gt.with_changes(qubit_frequency=gt.qubit_frequency + offset)
            self._superoperators.clear()
            self._trajectories.clear()

    def execute(self, request, n_shots=1000, rng=None):
        """
        Run a request on the device.

        Args:
            request (PulseSequence or SweepSpec): What to run
            n_shots (int): Shots per acquisition of a sequence
            rng (RngStream): Source of randomness; defaults to stream 0 of seed 0

        Returns:
            tuple or SweepResult: One ShotBatch or Trace per acquiring readout for a sequence, in time order
        """
        rng = rng if rng is not None else RngStream(0)
        if isinstance(request, SweepSpec):
            return self.sweep(request, rng)
        return self.run_sequence(request, n_shots, rng)

    def execute_many(self, sequences, n_shots, rng, processes=None):
        """
        Run several sequences, giving sequence i the child stream i.

        Sequences run on a pool of worker threads when processes > 1; the child streams make the result independent
        of the pool size. processes defaults to the device's own setting.
        """
        processes = self.processes if processes is None else processes
        worker = partial(self._run_indexed, sequences=sequences, n_shots=n_shots, rng=rng)
        if processes > 1 and len(sequences) > 1:
            with ThreadPool(min(processes, len(sequences))) as pool:
                return pool.map(worker, range(len(sequences)))
        return list(map(worker, range(len(sequences))))

    def _run_indexed(self, i, sequences, n_shots, rng):
        return self.run_sequence(sequences[i], n_shots, rng.child(i))

    def _cached(self, store, key):
        with self._lock:
            return store.get(key)

    # Propagation

    def _vec_dim(self):
        return self.n_levels ** 2

    def _idle_superoperator(self, n_samples, detuning, sample_period):
        key = ('idle', n_samples, float(detuning), float(sample_period))
        cached = self._cached(self._superoperators, key)
        if cached is not None:
            return cached
        gt = self.ground_truth
        H = qubit_hamiltonians(detuning, 2 * np.pi * gt.anharmonicity, 0., self.n_levels)
        generator = numerics.liouvillian(H, collapse_operators(gt, self.n_levels))
        result = numerics.propagator(generator, n_samples * sample_period)
        with self._lock:
            self._superoperators[key] = result
        return result

    def _driven_superoperator(self, omega, detuning, sample_period):
        key = ('driven', _fingerprint(omega, detuning), float(sample_period))
        cached = self._cached(self._superoperators, key)
        if cached is not None:
            return cached
        gt = self.ground_truth
        H = qubit_hamiltonians(detuning, 2 * np.pi * gt.anharmonicity, omega, self.n_levels)
        generators = numerics.liouvillian(H, collapse_operators(gt, self.n_levels))
        steps = scipy.linalg.expm(generators * sample_period)
        result = np.eye(self._vec_dim(), dtype=complex)
        for step in steps:
            result = step @ result
        with self._lock:
            self._superoperators[key] = result
        return result

    def pulse_superoperator(self, seq):
        """Superoperator of the qubit and flux part of a sequence, from time zero to its last control sample"""
        omega, detuning = sequence_controls(seq, self.ground_truth)
        active = self._active_mask(seq, len(omega))
        return self._propagate_span(omega, detuning, active, 0, len(omega), seq.sample_period,
                                    self._static_detuning(seq))

    def _active_mask(self, seq, n_samples):
        active = np.zeros(n_samples, dtype=bool)
        for channel in seq.channels:
            if channel.target in (QUBIT, FLUX):
                first = seq.sample_index(channel.start)
                active[first:first + len(channel.envelope)] = True
        return active

    def _propagate_span(self, omega, detuning, active, first, last, sample_period, idle_detuning):
        """Superoperator over samples [first, last); samples beyond the control arrays idle"""
        result = np.eye(self._vec_dim(), dtype=complex)
        k = first
        while k < last:
            if k < len(active) and active[k]:
                end = k
                while end < last and end < len(active) and active[end]:
                    end += 1
                step = self._driven_superoperator(omega[k:end], detuning[k:end], sample_period)
            else:
                end = k
                while end < last and not (end < len(active) and active[end]):
                    end += 1
                step = self._idle_superoperator(end - k, idle_detuning, sample_period)
            result = step @ result
            k = end
        return result

    def _trajectory_pair(self, channel, seq):
        gt = self.ground_truth
        key = (_fingerprint(channel.envelope), float(seq.sample_period), seq.readout_frequency, seq.flux_bias)
        cached = self._cached(self._trajectories, key)
        if cached is not None:
            return cached
        t_grid = np.arange(len(channel.envelope) + 1) * seq.sample_period
        pair = tuple(readout_trajectory(state, channel.envelope, gt, t_grid, seq.readout_frequency, seq.flux_bias)
                     for state in (0, 1))
        with self._lock:
            self._trajectories[key] = pair
        return pair

    def _dephase(self, branches, factor):
        """Multiply the coherences between level 0 and the excited levels by factor"""
        d = self.n_levels
        out = branches.copy()
        for level in range(1, d):
            out[:, level] *= factor
            out[:, level * d] *= np.conj(factor)
        return out

    def _excited_population(self, branches):
        d = self.n_levels
        diagonal = np.real(branches[:, [k * d + k for k in range(d)]])
        return np.clip(diagonal[:, 1:].sum(axis=1), 0., 1.)

    def run_sequence(self, seq, n_shots, rng):
        """
        Run a pulse sequence shot by shot.

        Args:
            seq (PulseSequence): The sequence
            n_shots (int): Number of shots
            rng (RngStream): Source of randomness

        Returns:
            tuple: One ShotBatch per 'shots' readout and one Trace per 'trace' readout, in time order

        Raises:
            InputError: If a qubit or flux segment overlaps a readout
        """
        gt = self.ground_truth
        dt = seq.sample_period
        generator = rng.generator()
        omega, detuning = sequence_controls(seq, gt)
        active = self._active_mask(seq, len(omega))
        idle_detuning = self._static_detuning(seq)

        readouts = sorted((c for c in seq.channels if c.target == READOUT), key=lambda c: c.start)
        for channel in readouts:
            first = seq.sample_index(channel.start)
            if np.any(active[first:first + len(channel.envelope)]):
                raise InputError("Qubit and flux controls may not overlap a readout")

        # Every shot starts from thermal equilibrium
        d2 = self._vec_dim()
        branches = thermal_state(gt.p_thermal, self.n_levels).reshape(1, d2)
        branch_of_shot = np.zeros(n_shots, dtype=int)
        cursor = 0
        results = []
        for channel in readouts:
            first = seq.sample_index(channel.start)
            span = self._propagate_span(omega, detuning, active, cursor, first, dt, idle_detuning)
            branches = branches @ span.T
            traj_g, traj_e = self._trajectory_pair(channel, seq)
            chi = 2 * np.pi * gt.dispersive_at(seq.flux_bias).chi

            if channel.acquire == 'shots':
                p_excited = self._excited_population(branches)[branch_of_shot]
                prep = (generator.random(n_shots) < p_excited).astype(int)
                weights = channel.weights if channel.weights is not None else boxcar_weights(traj_g.t)
                batch = acquire_shots(traj_g, traj_e, prep, weights, n_shots, gt.readout_efficiency, generator,
                                      t1=gt.t1)
                metadata = dict(batch.metadata, seed=rng.seed, stream=rng.stream_id, start=channel.start)
                results.append(replace(batch, prep_labels=None, metadata=metadata))
                # Each shot continues from the classical state the measurement left it in
                branches = np.stack([thermal_state(0., self.n_levels).reshape(d2),
                                     thermal_state(1., self.n_levels).reshape(d2)])
                branch_of_shot = batch.post_states
            else:
                if channel.acquire == 'trace':
                    p_excited = float(np.mean(self._excited_population(branches)[branch_of_shot])) if n_shots else 0.
                    results.append(self._averaged_trace(traj_g, traj_e, p_excited, n_shots, generator, rng, channel))
                idle = self._idle_superoperator(len(channel.envelope), idle_detuning, dt)
                branches = self._dephase(branches @ idle.T, measurement_phase_factor(traj_g, traj_e, chi))
            cursor = first + len(channel.envelope)
        return tuple(results)

    def _static_detuning(self, seq):
        gt = self.ground_truth
        drive = seq.drive_frequency if seq.drive_frequency is not None else gt.qubit_frequency_at(seq.flux_bias)
        return 2 * np.pi * (gt.qubit_frequency_at(seq.flux_bias) - drive)

    def _averaged_trace(self, traj_g, traj_e, p_excited, n_shots, generator, rng, channel):
        """Shot-averaged output field with white noise of variance N0/(dt n_shots) per quadrature"""
        gt = self.ground_truth
        mean = (1. - p_excited) * traj_g.alpha_out + p_excited * traj_e.alpha_out
        dt = traj_g.t[1] - traj_g.t[0]
        sigma = np.sqrt(noise_density(traj_g, gt.readout_efficiency) / (dt * max(n_shots, 1)))
        noise = sigma * (generator.standard_normal(len(mean)) + 1j * generator.standard_normal(len(mean)))
        metadata = {'n_shots': int(n_shots), 'seed': rng.seed, 'stream': rng.stream_id, 'start': channel.start}
        return Trace(traj_g.t, mean + noise, n_shots, metadata)

    def final_state(self, seq):
        """Density matrix after the qubit and flux segments of a sequence, starting from thermal equilibrium"""
        gt = self.ground_truth
        rho = thermal_state(gt.p_thermal, self.n_levels).reshape(-1)
        rho = self.pulse_superoperator(seq) @ rho
        return rho.reshape(self.n_levels, self.n_levels)

    # Sweeps

    def sweep(self, spec, rng):
        """
        Run a continuous-wave or analytic experiment.

        Args:
            spec (SweepSpec): The experiment
            rng (RngStream): Source of randomness

        Returns:
            SweepResult: Axes, data and metadata
        """
        generator = rng.generator()
        handler = getattr(self, '_sweep_' + spec.kind)
        axes = {name: np.asarray(values, dtype=float) for name, values in spec.axes.items()}
        data = handler(axes, spec.settings, spec.n_averages, generator)
        metadata = {'n_averages': spec.n_averages, 'seed': rng.seed, 'stream': rng.stream_id}
        logger.debug("Ran %s sweep with axes %s", spec.kind, list(axes))
        return SweepResult(spec.kind, axes, data, metadata)

    def _require(self, axes, *names):
        for name in names:
            if name not in axes:
                raise InputError("Sweep needs an axis named " + repr(name))

    def _state_populations(self, settings):
        """Ground and excited populations, after an optional prepulse sequence"""
        gt = self.ground_truth
        prepulse = settings.get('prepulse')
        if prepulse is None:
            return 1. - gt.p_thermal, gt.p_thermal
        rho = self.final_state(prepulse)
        p_excited = float(np.clip(np.real(np.trace(rho)) - np.real(rho[0, 0]), 0., 1.))
        return 1. - p_excited, p_excited

    def _noisy_s21(self, s21, n_averages, generator):
        scale = self.s21_noise * self.line.amplitude / np.sqrt(n_averages)
        return s21 + scale * (generator.standard_normal(s21.shape) + 1j * generator.standard_normal(s21.shape))

    def _sweep_s21(self, axes, settings, n_averages, generator):
        self._require(axes, 'frequency')
        gt = self.ground_truth
        p_ground, p_excited = self._state_populations(settings)
        bias = settings.get('flux_bias')
        powers = axes.get('power_dbm', np.atleast_1d(settings.get('power_dbm', -130.)))
        rows = []
        for power in powers:
            rows.append(p_ground * s21_response(axes['frequency'], power, 0, gt, self.line, bias)
                        + p_excited * s21_response(axes['frequency'], power, 1, gt, self.line, bias))
        data = np.array(rows)
        if 'power_dbm' not in axes:
            data = data[0]
        return self._noisy_s21(data, n_averages, generator)

    def _measured_population(self, population, n_averages, generator):
        p_thermal = self.ground_truth.p_thermal
        population = p_thermal + (1. - 2. * p_thermal) * np.clip(population, 0., 1.)
        return generator.binomial(n_averages, population) / float(n_averages)

    def _sweep_qubit_spectroscopy(self, axes, settings, n_averages, generator):
        self._require(axes, 'frequency')
        population = qubit_spectroscopy_response(axes['frequency'], settings.get('drive_rate', 0.),
                                                 self.ground_truth, settings.get('flux_bias'))
        return self._measured_population(population, n_averages, generator)

    def _sweep_three_tone(self, axes, settings, n_averages, generator):
        """
        Two-tone drive map. Each tone excites the 0-1 line on its own; together they drive the two-photon 0-2
        transition along f1 + f2 = f01 + f12, with a two-photon Rabi rate Omega1 Omega2 / alpha.
        """
        self._require(axes, 'frequency_1', 'frequency_2')
        gt = self.ground_truth
        bias = settings.get('flux_bias')
        rate_1 = settings.get('drive_rate_1', 0.)
        rate_2 = settings.get('drive_rate_2', 0.)
        f1, f2 = np.meshgrid(axes['frequency_1'], axes['frequency_2'], indexing='ij')
        single_1 = qubit_spectroscopy_response(f1, rate_1, gt, bias)
        single_2 = qubit_spectroscopy_response(f2, rate_2, gt, bias)

        f01 = gt.qubit_frequency_at(bias)
        two_photon_target = 2 * f01 - gt.anharmonicity
        # Keep the intermediate detuning finite for a harmonic device
        intermediate = 2 * np.pi * max(gt.anharmonicity, 1. / (2 * np.pi * gt.t2_star))
        two_photon_rate = rate_1 * rate_2 / intermediate
        saturation = two_photon_rate ** 2 * gt.t1 * gt.t2_star
        delta = 2 * np.pi * (f1 + f2 - two_photon_target)
        two_photon = saturation / (1. + saturation + (delta * gt.t2_star) ** 2)

        population = 1. - (1. - single_1) * (1. - single_2) * (1. - two_photon)
        return self._measured_population(population, n_averages, generator)

    def _sweep_resonator_flux(self, axes, settings, n_averages, generator):
        self._require(axes, 'current', 'frequency')
        gt = self.ground_truth
        p_ground, p_excited = 1. - gt.p_thermal, gt.p_thermal
        power = settings.get('power_dbm', -130.)
        rows = [p_ground * s21_response(axes['frequency'], power, 0, gt, self.line, current)
                + p_excited * s21_response(axes['frequency'], power, 1, gt, self.line, current)
                for current in axes['current']]
        return self._noisy_s21(np.array(rows), n_averages, generator)

    def _sweep_zz_echo(self, axes, settings, n_averages, generator):
        """
        Echo on qubit i with qubit j excited during the first arm only.

        Each point is propagated from the thermal state: an ideal pi/2 about x, tau/2 of free evolution detuned by
        delta + zeta, an ideal pi about x, tau/2 detuned by delta alone, and a final pi/2 about x or about y. The arms
        carry T1 and pure dephasing. delta is the static detuning ('detuning', Hz) plus a quasi-static drift drawn per
        point ('detuning_jitter', Hz) and held over both arms. Rows hold the excited population for the two final
        pulses, and the quadrature signal (2 P_x - 1) + i (2 P_y - 1) turns at zeta/2.
        """
        self._require(axes, 'delay')
        gt = self.ground_truth
        n = self.n_levels
        i, j = settings.get('pair', (0, 1))
        zeta = 0. if gt.zz_matrix is None else float(gt.zz_matrix[i][j])
        tau = axes['delay']
        detuning = settings.get('detuning', 0.) + settings.get('detuning_jitter', 0.) * generator.standard_normal(
            len(tau))
        c_ops = collapse_operators(gt, n)
        alpha = 2 * np.pi * gt.anharmonicity
        half_pi_x = _subspace_rotation(np.pi / 2., 0., n)
        pi_x = _subspace_rotation(np.pi, 0., n)
        finals = [_subspace_rotation(np.pi / 2., 0., n), _subspace_rotation(np.pi / 2., np.pi / 2., n)]
        rho0 = thermal_state(gt.p_thermal, n)

        rows = np.zeros((2, len(tau)))
        for k, (delay, delta) in enumerate(zip(tau, detuning)):
            # Spectator excited in the first arm only
            liouvillians = numerics.liouvillian(qubit_hamiltonians(2 * np.pi * np.array([delta + zeta, delta]), alpha,
                                                                   np.zeros(2), n), c_ops)
            arms = [numerics.propagator(L, delay / 2.) for L in liouvillians]
            rho = half_pi_x @ rho0 @ half_pi_x.conj().T
            rho = (arms[0] @ rho.reshape(-1)).reshape(n, n)
            rho = pi_x @ rho @ pi_x.conj().T
            rho = (arms[1] @ rho.reshape(-1)).reshape(n, n)
            for row, final in enumerate(finals):
                rows[row, k] = 1. - np.real((final @ rho @ final.conj().T)[0, 0])
        return generator.binomial(n_averages, np.clip(rows, 0., 1.)) / float(n_averages)

    def _sweep_mixer_spectrum(self, axes, settings, n_averages, generator):
        """Carrier and sideband powers for the given correction settings; deterministic above the noise floor"""
        mixer = self.ground_truth.mixer
        imbalance = (1. + mixer.imbalance) * (1. + settings.get('scale', 0.)) - 1.
        skew = mixer.skew + settings.get('skew', 0.)
        spectrum = mixer_output_spectrum(settings.get('i_offset', 0.), settings.get('q_offset', 0.), imbalance, skew,
                                         settings.get('f_lo', 6e9), settings.get('f_if', 100e6), mixer.lo_leak)
        return np.array([spectrum.p_lo, spectrum.p_usb, spectrum.p_lsb]) + self.spectrum_floor
