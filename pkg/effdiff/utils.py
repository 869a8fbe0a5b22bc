#!/usr/bin/env python
"""
Small helpers shared by the flow, scheme and ensemble modules
"""

import numpy as np


APERIODIC = 'aperiodic'

# Relative slack when checking that a horizon is a whole number of steps
COMMENSURATE_RTOL = 1e-9


def as_pair(value, name='value'):
    """
    Coerce a scalar or a length-2 sequence into a float array of shape (2,)
    :param value: float or sequence of two floats
    :param name: used in the error message
    :return: numpy array of shape (2,)
    """
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.array([float(arr), float(arr)])
    err = "%s must be a scalar or a pair, got %r" % (name, value)
    assert arr.shape == (2,), err
    return arr


def count_steps(horizon, tau):
    """
    Number of whole steps of size tau in horizon, or None if horizon
    is not a whole multiple of tau (within COMMENSURATE_RTOL)
    """
    if horizon == 0:
        return 0
    ratio = float(horizon) / float(tau)
    n_steps = int(round(ratio))
    if abs(ratio - n_steps) > COMMENSURATE_RTOL * max(1.0, abs(ratio)):
        return None
    return n_steps


def uniform_from_raw(raw):
    """Map raw 64 bit words to doubles in the open interval (0, 1)"""
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)


def box_muller(u1, u2):
    """Two independent standard normals from two independent uniforms"""
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    return radius * np.cos(angle), radius * np.sin(angle)


class StepGrid(object):
    """Uniform time grid t_k = k * tau, k = 0..n_steps"""

    def __init__(self, tau, n_steps):
        assert tau > 0, "Step size must be positive, got %s" % tau
        assert n_steps >= 0, "Number of steps must be non negative"
        self.tau = float(tau)
        self.n_steps = int(n_steps)

    @classmethod
    def for_horizon(cls, horizon, tau):
        n_steps = count_steps(horizon, tau)
        assert n_steps is not None, "Horizon %s is not a multiple of %s" % (horizon, tau)
        return cls(tau, n_steps)

    @property
    def horizon(self):
        return self.n_steps * self.tau

    @property
    def times(self):
        return self.tau * np.arange(self.n_steps + 1)

    def __eq__(self, other):
        return (isinstance(other, StepGrid) and self.tau == other.tau and
                self.n_steps == other.n_steps)

    def __ne__(self, other):
        return not self.__eq__(other)

    def __str__(self):
        return "StepGrid(tau=%g, n_steps=%d)" % (self.tau, self.n_steps)
