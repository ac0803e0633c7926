"""
Shared numerical kernels: nonlinear least squares, Hermitian eigenproblems, fixed-step ODE integration (including the
Lindblad master equation) and reproducible random streams.

Every fit in the package goes through least_squares_fit, every time evolution through integrate_ode, and every random
number through an RngStream, so that a run is fully determined by its seed regardless of how work is scheduled.
"""
import logging
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.optimize import least_squares

from cqedtwin.errors import InputError, IntegrationError

logger = logging.getLogger(__name__)

# Relative finite-difference step used for the central-difference Jacobian
DIFF_STEP = 1e-6
# Solver tolerances on cost, parameters and gradient
FIT_TOLERANCE = 1e-12
# Singular values below this fraction of the largest one mark a rank-deficient Jacobian
RANK_TOLERANCE = 1e-10
# Default cap on solver iterations
MAX_ITERATIONS = 200

# Default integration tolerance on the change of any state element when the step is halved
ODE_TOLERANCE = 1e-8
# Allowed drift of the trace of a density matrix
TRACE_TOLERANCE = 1e-6
# Number of times the step may be halved before giving up
MAX_REFINEMENTS = 14
# Target product of step size and generator norm for the first attempt
INITIAL_STEP_SCALE = 0.5


Eigensystem = namedtuple('Eigensystem', ['values', 'vectors'])


@dataclass(frozen=True)
class FitResult:
    """
    The outcome of a least squares fit.

    Vars:
        params (np.ndarray): Best-fit parameters in model units
        covariance (np.ndarray): Parameter covariance estimated from the Jacobian at the solution
        residual_norm (float): Euclidean norm of the residual vector at the solution
        converged (bool): Whether the solver terminated on a tolerance with a well-conditioned Jacobian
        n_iterations (int): Number of Jacobian evaluations performed
        names (tuple): Optional parameter names, in the same order as params
    """
    params: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    converged: bool
    n_iterations: int
    names: tuple = None

    @property
    def stderr(self):
        """One standard deviation uncertainties of the parameters"""
        return np.sqrt(np.clip(np.diag(self.covariance), 0., None))

    def __getitem__(self, name):
        if self.names is None:
            raise KeyError(name)
        return self.params[self.names.index(name)]

    def error(self, name):
        return self.stderr[self.names.index(name)]

    def as_dict(self):
        names = self.names or tuple('p' + str(i) for i in range(len(self.params)))
        return {'params': {n: float(v) for n, v in zip(names, self.params)},
                'stderr': {n: float(v) for n, v in zip(names, self.stderr)},
                'covariance': np.asarray(self.covariance, dtype=float).tolist(),
                'residual_norm': float(self.residual_norm),
                'converged': bool(self.converged),
                'n_iterations': int(self.n_iterations)}


def least_squares_fit(model, x, y, p0, bounds=None, names=None, max_iterations=MAX_ITERATIONS):
    """
    Fit a parametric model to data by minimising the sum of squared residuals.

    The solver is scipy's trust-region reflective least squares, a damped Gauss-Newton scheme, driven with central
    finite-difference Jacobians. Parameters are normalised by the magnitude of p0 before solving so that the relative
    difference step is meaningful for quantities of any scale (a T1 of 50 us and a frequency of 5 GHz alike). Complex
    data is handled by concatenating the real and imaginary parts of the residual.

    Args:
        model (callable): model(x, *params) returning an array shaped like y
        x (array_like): Independent variable; its first axis indexes the data points
        y (array_like): Real or complex data
        p0 (array_like): Initial parameter guess
        bounds (tuple): Optional (lower, upper) sequences bounding the parameters
        names (tuple): Optional parameter names carried into the result
        max_iterations (int): Cap on solver iterations; reaching it leaves the result unconverged

    Returns:
        FitResult: The solution with covariance and convergence diagnostics

    Raises:
        InputError: If the data and parameter dimensions do not match, or any input is non-finite
    """
    x = np.asarray(x)
    y = np.asarray(y)
    p0 = np.asarray(p0, dtype=float)

    # Validate the shapes of everything we were handed
    if len(x) != len(y):
        raise InputError("x has " + str(len(x)) + " points but y has " + str(len(y)))
    if len(y) < len(p0):
        raise InputError("Cannot fit " + str(len(p0)) + " parameters to " + str(len(y)) + " points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(p0))):
        raise InputError("Fit inputs must be finite")

    # Work in normalised parameters u = p / scale
    scale = np.where(p0 != 0., np.abs(p0), 1.)
    u0 = p0 / scale

    if bounds is None:
        scaled_bounds = (-np.inf, np.inf)
    else:
        lower = np.broadcast_to(np.asarray(bounds[0], dtype=float), p0.shape) / scale
        upper = np.broadcast_to(np.asarray(bounds[1], dtype=float), p0.shape) / scale
        scaled_bounds = (lower, upper)
        # The solver needs a strictly feasible starting point
        u0 = np.clip(u0, lower, upper)
        width = upper - lower
        nudge = np.where(np.isfinite(width), 1e-9 * width, 1e-9)
        u0 = np.where(u0 <= lower, lower + nudge, u0)
        u0 = np.where(u0 >= upper, upper - nudge, u0)

    is_complex = np.iscomplexobj(y)

    def residuals(u):
        r = np.asarray(model(x, *(u * scale))) - y
        if is_complex or np.iscomplexobj(r):
            r = np.concatenate([np.real(r).ravel(), np.imag(r).ravel()])
        return np.ravel(r).astype(float)

    result = least_squares(residuals, u0, jac='3-point', bounds=scaled_bounds, method='trf', diff_step=DIFF_STEP,
                           ftol=FIT_TOLERANCE, xtol=FIT_TOLERANCE, gtol=FIT_TOLERANCE, max_nfev=max_iterations)

    # Covariance from the Gauss-Newton approximation to the Hessian
    jacobian = np.atleast_2d(result.jac)
    n_residuals, n_params = jacobian.shape
    singular_values = np.linalg.svd(jacobian, compute_uv=False)
    full_rank = singular_values.size == n_params and singular_values[-1] > RANK_TOLERANCE * singular_values[0]
    residual_norm = float(np.linalg.norm(result.fun))
    dof = max(n_residuals - n_params, 1)
    covariance_u = np.linalg.pinv(jacobian.T @ jacobian) * residual_norm ** 2 / dof
    covariance = covariance_u * np.outer(scale, scale)
    covariance = 0.5 * (covariance + covariance.T)

    n_iterations = result.njev if result.njev is not None else result.nfev
    converged = bool(result.status > 0 and full_rank)
    if not converged:
        logger.debug("Fit did not converge: status %d, full rank %s", result.status, full_rank)

    return FitResult(params=result.x * scale, covariance=covariance, residual_norm=residual_norm,
                     converged=converged, n_iterations=int(n_iterations),
                     names=tuple(names) if names is not None else None)


def eigh(H):
    """
    Diagonalise a Hermitian matrix.

    Args:
        H (array_like): Square complex matrix, Hermitian to within 1e-10 of its norm

    Returns:
        Eigensystem: values in ascending order and the unitary matrix of eigenvectors (as columns)

    Raises:
        InputError: If H is not square or not Hermitian
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise InputError("eigh needs a square matrix, got shape " + str(H.shape))
    norm = np.linalg.norm(H)
    if np.linalg.norm(H - H.conj().T) > 1e-10 * max(norm, np.finfo(float).tiny):
        raise InputError("Matrix is not Hermitian")
    values, vectors = scipy.linalg.eigh(H)
    return Eigensystem(values, vectors)


def integrate_ode(rhs, y0, t_grid, tolerance=ODE_TOLERANCE, initial_substeps=1, project=None,
                  max_refinements=MAX_REFINEMENTS):
    """
    Integrate dy/dt = rhs(t, y, segment) with fixed-step fourth order Runge-Kutta.

    Each interval of t_grid is split into the same number of substeps. The number of substeps is doubled until doing
    so changes no element of the solution on the grid by more than the tolerance. The segment argument handed to rhs
    is the index of the grid interval being integrated, which lets callers supply piecewise constant drives without
    evaluating them at interval boundaries.

    Args:
        rhs (callable): rhs(t, y, segment) returning dy/dt with the shape of y
        y0 (array_like): Initial state of any shape
        t_grid (array_like): Strictly increasing output times, starting at the time of y0
        tolerance (float): Allowed change of the solution under step halving
        initial_substeps (int): Substeps per interval on the first attempt
        project (callable): Optional map applied to the state after every step
        max_refinements (int): Maximum number of halvings

    Returns:
        (np.ndarray, int): The solution at every grid point, stacked along a new first axis, and the number of
            substeps per interval that met the tolerance

    Raises:
        InputError: If the grid is not strictly increasing
        IntegrationError: If the tolerance is not met after max_refinements halvings
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) < 2 or np.any(np.diff(t_grid) <= 0):
        raise InputError("t_grid must be strictly increasing with at least two points")
    y0 = np.asarray(y0, dtype=complex)

    substeps = max(int(initial_substeps), 1)
    previous = _rk4_on_grid(rhs, y0, t_grid, substeps, project)
    for _ in range(max_refinements):
        substeps *= 2
        current = _rk4_on_grid(rhs, y0, t_grid, substeps, project)
        with np.errstate(invalid='ignore', over='ignore'):
            change = np.max(np.abs(current - previous))
        if np.isfinite(change) and change < tolerance:
            logger.debug("RK4 converged with %d substeps per interval (change %.3g)", substeps, change)
            return current, substeps
        previous = current
    raise IntegrationError("Step halving did not converge after " + str(max_refinements) + " refinements")


def _rk4_on_grid(rhs, y0, t_grid, substeps, project):
    """Run RK4 with a fixed number of substeps per grid interval and return the solution on the grid"""
    out = np.empty((len(t_grid),) + y0.shape, dtype=complex)
    out[0] = y0
    y = y0.copy()
    with np.errstate(invalid='ignore', over='ignore'):
        for k in range(len(t_grid) - 1):
            h = (t_grid[k + 1] - t_grid[k]) / substeps
            t = t_grid[k]
            for j in range(substeps):
                k1 = rhs(t, y, k)
                k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1, k)
                k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2, k)
                k4 = rhs(t + h, y + h * k3, k)
                y = y + (h / 6.) * (k1 + 2. * k2 + 2. * k3 + k4)
                if project is not None:
                    y = project(y)
                t = t_grid[k] + (j + 1) * h
            out[k + 1] = y
    return out


def dagger(a):
    return np.conj(np.swapaxes(a, -1, -2))


def integrate_lindblad(hamiltonian, collapse_ops, rho0, t_grid, piecewise=False, tolerance=ODE_TOLERANCE):
    """
    Integrate the Lindblad master equation

        drho/dt = -i[H, rho] + sum_k (L_k rho L_k^dag - {L_k^dag L_k, rho}/2)

    with H in angular units (rad/s) and collapse operators already carrying the square roots of their rates.

    The density matrix may carry leading batch dimensions, in which case the Hamiltonian may broadcast against them;
    this is how many pulses or many initial states are evolved in one pass. The state is re-symmetrised after every
    step so Hermiticity holds to rounding.

    Args:
        hamiltonian (callable or array_like): H(t), a constant matrix, or (with piecewise=True) an array whose first
            axis holds one matrix per interval of t_grid
        collapse_ops (list): Collapse operators, each a (d, d) matrix
        rho0 (array_like): Initial density matrix, shape (..., d, d)
        t_grid (array_like): Strictly increasing output times
        piecewise (bool): Interpret hamiltonian as piecewise constant on the intervals of t_grid
        tolerance (float): Step-halving tolerance passed to integrate_ode

    Returns:
        np.ndarray: rho at every time in t_grid, shape (len(t_grid), ..., d, d)

    Raises:
        InputError: If rho0 is not a valid density matrix
        IntegrationError: If the trace drifts or positivity is lost beyond TRACE_TOLERANCE
    """
    rho0 = np.asarray(rho0, dtype=complex)
    t_grid = np.asarray(t_grid, dtype=float)
    _check_density_matrix(rho0)

    collapse_ops = [np.asarray(c, dtype=complex) for c in collapse_ops]
    decay_terms = [(c, dagger(c), dagger(c) @ c) for c in collapse_ops]

    # Normalise the three ways of giving H to a function of (t, segment)
    if callable(hamiltonian):
        def h_of(t, segment):
            return np.asarray(hamiltonian(t), dtype=complex)
        samples = [h_of(t_grid[0], 0), h_of(0.5 * (t_grid[0] + t_grid[-1]), 0)]
    elif piecewise:
        h_array = np.asarray(hamiltonian, dtype=complex)
        if h_array.shape[0] != len(t_grid) - 1:
            raise InputError("Piecewise Hamiltonian needs one matrix per interval")

        def h_of(t, segment):
            return h_array[segment]
        samples = [h_array]
    else:
        h_const = np.asarray(hamiltonian, dtype=complex)

        def h_of(t, segment):
            return h_const
        samples = [h_const]

    def rhs(t, rho, segment):
        H = h_of(t, segment)
        drho = -1j * (H @ rho - rho @ H)
        for c, c_dag, c_dag_c in decay_terms:
            drho = drho + c @ rho @ c_dag - 0.5 * (c_dag_c @ rho + rho @ c_dag_c)
        return drho

    # Pick the first step so that the generator norm times the step is of order one
    rate = max(np.max(np.sum(np.abs(s), axis=-1)) for s in samples)
    rate += sum(float(np.sum(np.abs(c_dag_c))) for _, _, c_dag_c in decay_terms)
    max_dt = float(np.max(np.diff(t_grid)))
    initial_substeps = int(np.ceil(rate * max_dt / INITIAL_STEP_SCALE)) if rate > 0 else 1

    trajectory, _ = integrate_ode(rhs, rho0, t_grid, tolerance=tolerance, initial_substeps=initial_substeps,
                                  project=lambda rho: 0.5 * (rho + dagger(rho)))

    # Check the physical constraints the integrator is supposed to preserve
    traces = np.real(np.trace(trajectory, axis1=-2, axis2=-1))
    if np.max(np.abs(traces - 1.)) > TRACE_TOLERANCE:
        raise IntegrationError("Trace drifted by " + str(np.max(np.abs(traces - 1.))) + "; step too large")
    min_eigenvalue = np.min(np.linalg.eigvalsh(trajectory))
    if min_eigenvalue < -TRACE_TOLERANCE:
        raise IntegrationError("Density matrix lost positivity (eigenvalue " + str(min_eigenvalue) + ")")
    return trajectory


def _check_density_matrix(rho):
    if rho.ndim < 2 or rho.shape[-1] != rho.shape[-2]:
        raise InputError("Density matrix must be square, got shape " + str(rho.shape))
    if np.max(np.abs(rho - dagger(rho))) > 1e-9:
        raise InputError("Density matrix is not Hermitian")
    if np.max(np.abs(np.real(np.trace(rho, axis1=-2, axis2=-1)) - 1.)) > 1e-9:
        raise InputError("Density matrix does not have unit trace")
    if np.min(np.linalg.eigvalsh(rho)) < -1e-9:
        raise InputError("Density matrix is not positive semidefinite")


def liouvillian(hamiltonian, collapse_ops):
    """
    Build the Lindblad generator as a matrix acting on row-major vectorised density matrices.

    Uses vec(A rho B) = (A kron B^T) vec(rho). The Hamiltonian may carry leading batch dimensions, one generator is
    then built per Hamiltonian.

    Args:
        hamiltonian (array_like): Time independent H in rad/s, shape (..., d, d)
        collapse_ops (list): Collapse operators with rates folded in

    Returns:
        np.ndarray: The generator, shape (..., d^2, d^2)
    """
    H = np.asarray(hamiltonian, dtype=complex)
    d = H.shape[-1]
    identity = np.eye(d)
    left = np.einsum('...ij,kl->...ikjl', H, identity)
    right = np.einsum('ij,...lk->...ikjl', identity, H)
    generator = (-1j * (left - right)).reshape(H.shape[:-2] + (d * d, d * d))
    dissipator = np.zeros((d * d, d * d), dtype=complex)
    for c in collapse_ops:
        c = np.asarray(c, dtype=complex)
        c_dag_c = c.conj().T @ c
        dissipator += np.kron(c, c.conj()) - 0.5 * (np.kron(c_dag_c, identity) + np.kron(identity, c_dag_c.T))
    return generator + dissipator


def propagator(generator, duration):
    """Exact propagator exp(L t) of a time independent Liouvillian"""
    return scipy.linalg.expm(generator * duration)


@dataclass(frozen=True)
class RngStream:
    """
    A reproducible, splittable source of random numbers.

    The generator is a counter-based Philox stream keyed by (seed, stream_id), so identical pairs reproduce identical
    sample sequences and distinct stream ids are independent. Instances are plain values; hand a copy (or a child) to
    every concurrent task.

    Vars:
        seed (int): Non-negative 64-bit seed shared by a whole run
        stream_id (int): Non-negative 64-bit stream identifier
    """
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2 ** 64 and 0 <= int(self.stream_id) < 2 ** 64):
            raise InputError("seed and stream_id must be non-negative 64-bit integers")

    def generator(self):
        """A fresh numpy Generator positioned at the start of this stream"""
        sequence = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.Philox(sequence))

    def child(self, index):
        """A new stream derived deterministically from this one and an index"""
        sequence = np.random.SeedSequence([int(self.seed), int(self.stream_id), int(index)])
        return RngStream(self.seed, int(sequence.generate_state(1, dtype=np.uint64)[0]))
