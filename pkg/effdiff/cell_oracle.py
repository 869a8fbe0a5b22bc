#!/usr/bin/env python
"""
Eulerian effective diffusivity of a steady periodic flow.

Solves the cell problem  v . grad w_i - D0 lap w_i = -v_i  on one spatial
period with a Fourier pseudo-spectral discretisation and GMRES, then
    D_ij = D0 (delta_ij + < grad w_i . grad w_j >).
"""

import logging
import math

import numpy as np
from scipy.sparse.linalg import LinearOperator
from scipy.sparse.linalg import gmres


logger = logging.getLogger(__name__)


class NoConvergence(Exception):
    """The Krylov solve did not reach the requested residual"""

    def __init__(self, residual, tol):
        msg = ("Cell problem residual %.3e above tolerance %.1e; "
               "increase the number of modes or D0" % (residual, tol))
        super(NoConvergence, self).__init__(msg)
        self.residual = residual
        self.tol = tol


class IncompatibleSource(Exception):
    """The source term has a non-zero mean, the cell problem has no periodic solution"""

    def __init__(self, mean_mode):
        super(IncompatibleSource, self).__init__(
            "Cell problem source has mean mode %.3e" % abs(mean_mode))
        self.mean_mode = mean_mode


class SpectralGrid(object):
    """N x N collocation grid on the square [0, period)^2"""

    def __init__(self, n_modes, period):
        assert n_modes >= 4 and n_modes & (n_modes - 1) == 0, \
            "Number of modes must be a power of two, got %s" % n_modes
        self.n_modes = int(n_modes)
        self.period = float(period)
        nodes = self.period * np.arange(n_modes) / n_modes
        self.points = np.stack(np.meshgrid(nodes, nodes, indexing='ij'), axis=-1)
        index = np.fft.fftfreq(n_modes, 1.0 / n_modes)
        wavenumber = 2.0 * math.pi / self.period * index
        self.kx, self.ky = np.meshgrid(wavenumber, wavenumber, indexing='ij')
        self.k2 = self.kx ** 2 + self.ky ** 2
        kept = np.abs(index) <= n_modes // 3
        # 2/3 rule
        self.mask = np.logical_and.outer(kept, kept)

    def to_modes(self, values):
        return np.fft.fft2(values, norm='forward')

    def to_values(self, modes):
        return np.fft.ifft2(modes, norm='forward')

    def gradient(self, modes):
        return (self.to_values(1j * self.kx * modes),
                self.to_values(1j * self.ky * modes))


class CellSolution(object):
    """
    Fourier coefficients of the correctors w_1, w_2 (shape (2, N, N),
    norm='forward' convention) and the resulting diffusivity matrix
    """

    def __init__(self, flow, grid, d0, modes, residual):
        self.flow = flow
        self.grid = grid
        self.D0 = float(d0)
        self.modes = modes
        self.residual = residual
        self.D_matrix = effective_diffusivity_eulerian(self)

    @property
    def n_modes(self):
        return self.grid.n_modes

    def __str__(self):
        D = self.D_matrix
        return "CellSolution(D0=%g, N=%d, D11=%.10g, D12=%.3g, D22=%.10g, residual=%.2e)" % (
            self.D0, self.n_modes, D[0, 0], D[0, 1], D[1, 1], self.residual)


def _advection_operator(grid, velocity, d0):
    n = grid.n_modes
    v1, v2 = velocity[..., 0], velocity[..., 1]
    outside = ~grid.mask
    outside[0, 0] = True

    def apply(vec):
        w = vec.reshape(n, n)
        grad_x, grad_y = grid.gradient(w)
        out = grid.to_modes(v1 * grad_x + v2 * grad_y) + d0 * grid.k2 * w
        # Zero mode pinned, aliased modes decoupled
        out[outside] = w[outside]
        return out.ravel()

    def precondition(vec):
        w = vec.reshape(n, n)
        out = w.copy()
        inside = ~outside
        out[inside] = w[inside] / (d0 * grid.k2[inside])
        return out.ravel()

    shape = (n * n, n * n)
    return (LinearOperator(shape, matvec=apply, dtype=complex),
            LinearOperator(shape, matvec=precondition, dtype=complex))


def solve_cell(flow, d0, n_modes=64, tol=1e-10, t=None, driver=None, restart=50, maxiter=200):
    """
    :param flow: steady FlowSpec; time dependent flows need `t` to freeze them
    :param d0: molecular diffusivity > 0
    :param n_modes: modes per axis, a power of two
    :param tol: bound on the relative residual of the discrete cell equation
    :param driver: OU value for OU driven flows frozen at `t`
    :return: CellSolution
    :raise IncompatibleSource: a velocity component has a non-zero mean
    :raise NoConvergence: the residual stays above tol
    """
    assert d0 > 0, "D0 must be positive, got %s" % d0
    if not flow.is_steady and t is None:
        raise ValueError("Flow %s is time dependent, pass t to freeze it" % flow)
    period = flow.space_period or 2.0 * math.pi
    grid = SpectralGrid(n_modes, period)
    t = 0.0 if t is None else t
    if flow.needs_driver and driver is None:
        driver = math.cos(t)
    velocity = flow.velocity(t, grid.points, driver)

    operator, preconditioner = _advection_operator(grid, velocity, d0)
    modes = np.zeros((2, n_modes, n_modes), dtype=complex)
    residuals = []
    for i in range(2):
        source = -grid.to_modes(velocity[..., i])
        if abs(source[0, 0]) > 1e-12:
            raise IncompatibleSource(source[0, 0])
        source[~grid.mask] = 0.0
        source[0, 0] = 0.0
        rhs = source.ravel()
        scale = np.linalg.norm(rhs) or 1.0
        iterations = []
        solution, info = gmres(operator, rhs, rtol=0.1 * tol, atol=0.0, restart=restart,
                               maxiter=maxiter, M=preconditioner,
                               callback=iterations.append, callback_type='pr_norm')
        residual = np.linalg.norm(operator.matvec(solution) - rhs) / scale
        logger.debug("Cell problem w_%d: info=%d, %d iterations, residual %.2e",
                     i + 1, info, len(iterations), residual)
        if residual > tol:
            raise NoConvergence(residual, tol)
        modes[i] = solution.reshape(n_modes, n_modes)
        modes[i][0, 0] = 0.0
        residuals.append(residual)
    sol = CellSolution(flow, grid, d0, modes, max(residuals))
    logger.info("%s", sol)
    return sol


def effective_diffusivity_eulerian(sol):
    """D0 (I + <grad w_i . grad w_j>), the average taken by Parseval over the modes"""
    k2 = sol.grid.k2
    gram = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            gram[i, j] = np.sum(k2 * sol.modes[i] * np.conj(sol.modes[j])).real
    return sol.D0 * (np.eye(2) + gram)


def gradient_gram_physical(sol):
    """<grad w_i . grad w_j> averaged over the collocation grid"""
    grads = [sol.grid.gradient(sol.modes[i]) for i in range(2)]
    gram = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            gram[i, j] = np.mean(grads[i][0] * np.conj(grads[j][0]) +
                                 grads[i][1] * np.conj(grads[j][1])).real
    return gram


def parseval_residual(sol):
    """Largest gap between the spectral and the physical space average of grad w_i . grad w_j"""
    spectral = effective_diffusivity_eulerian(sol) / sol.D0 - np.eye(2)
    return float(np.max(np.abs(spectral - gradient_gram_physical(sol))))

