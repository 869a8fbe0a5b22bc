#!/usr/bin/env python
"""
Reproducible Gaussian increments and the Ornstein-Uhlenbeck driver.

Every draw is a pure function of (master seed, stream, step counter,
particle index): the Philox4x64 key holds the seed and the (stream, counter)
pair, the Philox counter is the particle index. One Philox block gives four
standard normals, so any contiguous range of particles can be generated
independently of how the ensemble is split across workers.
"""

import math

import numpy as np

from effdiff.utils import StepGrid
from effdiff.utils import box_muller
from effdiff.utils import uniform_from_raw


MASK64 = (1 << 64) - 1

STREAM_PARTICLE = 0
STREAM_OU = 1
STREAM_OU_INIT = 2

NORMALS_PER_BLOCK = 4


def standard_normals(master_seed, stream, counter, first_index, count):
    """
    Standard normal blocks for particles first_index .. first_index + count - 1
    :param master_seed: 64 bit seed of the experiment
    :param stream: STREAM_* tag, keeps particle and driver noise independent
    :param counter: step counter
    :return: array of shape (count, NORMALS_PER_BLOCK)
    """
    assert 0 <= counter < (1 << 56), "Step counter out of range: %s" % counter
    assert first_index >= 0, "Particle index must be non negative"
    high = (int(stream) << 56) | int(counter)
    key = (int(master_seed) & MASK64) | (high << 64)
    bitgen = np.random.Philox(counter=int(first_index), key=key)
    raw = bitgen.random_raw(NORMALS_PER_BLOCK * count).reshape(count, NORMALS_PER_BLOCK)
    uniforms = uniform_from_raw(raw)
    out = np.empty((count, NORMALS_PER_BLOCK))
    out[:, 0], out[:, 1] = box_muller(uniforms[:, 0], uniforms[:, 1])
    out[:, 2], out[:, 3] = box_muller(uniforms[:, 2], uniforms[:, 3])
    return out


class NoiseStream(object):
    """
    Gaussian source for one particle (count=None) or for a contiguous
    batch of particles starting at particle_index.
    """

    def __init__(self, master_seed, particle_index=0, counter=0, count=None,
                 stream=STREAM_PARTICLE):
        assert count is None or count >= 1, "Batch size must be positive"
        self.master_seed = int(master_seed) & MASK64
        self.particle_index = int(particle_index)
        self.counter = int(counter)
        self.count = count
        self.stream = stream

    @property
    def size(self):
        return 1 if self.count is None else self.count

    def draw(self):
        """
        Standard normal block for the current counter, then advance the counter
        :return: shape (4,) for a single particle, (count, 4) for a batch
        """
        block = standard_normals(self.master_seed, self.stream, self.counter,
                                 self.particle_index, self.size)
        self.counter += 1
        if self.count is None:
            return block[0]
        return block

    def gaussian_increment(self, tau):
        """Two independent N(0, tau) draws per particle"""
        assert tau > 0, "Step size must be positive, got %s" % tau
        return math.sqrt(tau) * self.draw()[..., :2]

    def copy(self):
        return NoiseStream(self.master_seed, self.particle_index, self.counter,
                           self.count, self.stream)

    def __str__(self):
        return "NoiseStream(seed=%d, index=%d, counter=%d, count=%s)" % (
            self.master_seed, self.particle_index, self.counter, self.count)


def gaussian_increment(stream, tau):
    """Next N(0, tau) pair of `stream`, see NoiseStream.gaussian_increment"""
    return stream.gaussian_increment(tau)


class OUParams(object):
    """Parameters of d eta = theta_ou (mu_ou - eta) dt + sigma_ou dW"""

    default_theta_ou = 1.0
    default_mu_ou = 0.0
    default_sigma_ou = 1.0

    def __init__(self, theta_ou=None, mu_ou=None, sigma_ou=None):
        self.theta_ou = float(OUParams.default_theta_ou if theta_ou is None else theta_ou)
        self.mu_ou = float(OUParams.default_mu_ou if mu_ou is None else mu_ou)
        self.sigma_ou = float(OUParams.default_sigma_ou if sigma_ou is None else sigma_ou)
        assert self.theta_ou > 0, "theta_ou must be positive"
        assert self.sigma_ou >= 0, "sigma_ou must be non negative"

    @property
    def stationary_variance(self):
        return self.sigma_ou ** 2 / (2.0 * self.theta_ou)

    def autocovariance(self, lag):
        """Stationary covariance of eta_t and eta_{t + lag}"""
        return self.stationary_variance * np.exp(-self.theta_ou * np.abs(lag))

    def __eq__(self, other):
        return (isinstance(other, OUParams) and
                (self.theta_ou, self.mu_ou, self.sigma_ou) ==
                (other.theta_ou, other.mu_ou, other.sigma_ou))

    def __ne__(self, other):
        return not self.__eq__(other)

    def __str__(self):
        return "OUParams(theta_ou=%g, mu_ou=%g, sigma_ou=%g)" % (
            self.theta_ou, self.mu_ou, self.sigma_ou)


def ou_step(params, eta, tau, xi):
    """
    Exact transition of the OU process over a step tau
    :param eta: current value(s)
    :param xi: standard normal(s) with the shape of eta
    """
    assert tau > 0, "Step size must be positive, got %s" % tau
    decay = math.exp(-params.theta_ou * tau)
    spread = params.sigma_ou * math.sqrt(
        -math.expm1(-2.0 * params.theta_ou * tau) / (2.0 * params.theta_ou))
    return params.mu_ou + (eta - params.mu_ou) * decay + spread * xi


class OUDriver(object):
    """
    n_paths independent OU realisations on the integrator grid. Values are a
    pure function of (master_seed, path index, step counter) and use streams
    disjoint from the particle noise.
    """

    def __init__(self, params, master_seed, n_paths):
        assert n_paths >= 1, "Need at least one OU path"
        self.params = params
        self.master_seed = int(master_seed) & MASK64
        self.n_paths = int(n_paths)

    def initial(self):
        """Stationary draw N(mu, sigma^2 / (2 theta)) per path"""
        xi = standard_normals(self.master_seed, STREAM_OU_INIT, 0, 0, self.n_paths)[:, 0]
        return self.params.mu_ou + math.sqrt(self.params.stationary_variance) * xi

    def advance(self, eta, counter, tau):
        """Values at step counter + 1 given the values at step counter"""
        xi = standard_normals(self.master_seed, STREAM_OU, counter, 0, self.n_paths)[:, 0]
        return ou_step(self.params, eta, tau, xi)


class OUPath(object):
    """Sampled OU values, shape (n_paths, n_steps + 1), on a StepGrid"""

    def __init__(self, grid, values):
        assert isinstance(grid, StepGrid)
        self.grid = grid
        self.values = values

    @property
    def times(self):
        return self.grid.times

    @property
    def n_paths(self):
        return self.values.shape[0]


def ou_path(params, grid, seed, n_paths=1, initial=None):
    """
    Realise OU paths on the integrator grid
    :param grid: StepGrid of the integrator
    :param initial: starting value; None draws from the stationary law
    :return: OUPath
    """
    driver = OUDriver(params, seed, n_paths)
    values = np.empty((n_paths, grid.n_steps + 1))
    if initial is None:
        values[:, 0] = driver.initial()
    else:
        values[:, 0] = initial
    for counter in range(grid.n_steps):
        values[:, counter + 1] = driver.advance(values[:, counter], counter, grid.tau)
    return OUPath(grid, values)
