#!/usr/bin/env python
"""
Two dimensional incompressible velocity fields generated by a Hamiltonian

Positions are (p, q) == (x1, x2) and every family satisfies
    v1 = -dH/dq,  v2 = dH/dp
Arrays of positions have shape (..., 2); time and driver values broadcast
against the leading dimensions.
"""

import enum
import math

import numpy as np

from effdiff.utils import APERIODIC


class FlowFamily(enum.Enum):
    """Velocity field families addressable from config files and the CLI"""
    QUIESCENT = 'quiescent'
    TAYLOR_GREEN = 'taylor-green'
    OSCILLATING_VORTEX = 'oscillating-vortex'
    TIME_DEPENDENT_TAYLOR_GREEN = 'time-dependent-taylor-green'
    CHAOTIC_CELLULAR = 'chaotic-cellular'
    OU_CELLULAR = 'ou-cellular'


REQUIRED_PARAMS = {
    FlowFamily.QUIESCENT: (),
    FlowFamily.TAYLOR_GREEN: ('k',),
    FlowFamily.OSCILLATING_VORTEX: ('k', 'B', 'omega'),
    FlowFamily.TIME_DEPENDENT_TAYLOR_GREEN: ('k', 'B', 'omega'),
    FlowFamily.CHAOTIC_CELLULAR: ('theta',),
    FlowFamily.OU_CELLULAR: ('theta',),
}

DEFAULT_PARAMS = {
    'k': 2.0 * math.pi,
    'B': 0.0,
    'omega': math.pi,
    'theta': 0.1,
}


class FlowConfigError(Exception):
    """A flow family is unknown or a parameter it needs is missing"""

    def __init__(self, family, parameter=None):
        if parameter is None:
            msg = "Unknown flow family '%s'" % (family,)
        else:
            msg = "Flow '%s' requires parameter '%s'" % (family, parameter)
        super(FlowConfigError, self).__init__(msg)
        self.family = family
        self.parameter = parameter


class NotSeparableError(Exception):
    """The Hamiltonian of the flow couples p and q (e.g. oscillating vortices with B != 0)"""

    def __init__(self, family):
        msg = "Flow '%s' has no separable Hamiltonian form" % (family,)
        super(NotSeparableError, self).__init__(msg)
        self.family = family


def parse_family(value):
    """Return the FlowFamily for a name such as 'taylor-green'"""
    if isinstance(value, FlowFamily):
        return value
    try:
        return FlowFamily(str(value).strip().lower().replace('_', '-'))
    except ValueError:
        raise FlowConfigError(value)


class CoordinateMap(object):
    """
    Affine change of variables y = M x + c used to expose a separable form.

    The Hamiltonian in the new variables relates to the original one by
    H(x) = hamiltonian_scale * H_y(y) + const, and isotropic noise of
    amplitude sigma becomes isotropic noise of amplitude noise_scale * sigma.
    """

    def __init__(self, matrix=None, offset=None, hamiltonian_scale=1.0):
        if matrix is None:
            matrix = np.eye(2)
        if offset is None:
            offset = np.zeros(2)
        self.matrix = np.asarray(matrix, dtype=float)
        self.offset = np.asarray(offset, dtype=float)
        self.inverse_matrix = np.linalg.inv(self.matrix)
        self.hamiltonian_scale = float(hamiltonian_scale)
        gram = self.matrix.dot(self.matrix.T)
        err = "Coordinate map must scale noise isotropically, got %s" % gram
        assert np.allclose(gram, gram[0, 0] * np.eye(2)), err
        self.noise_scale = math.sqrt(gram[0, 0])
        self.is_identity = (np.array_equal(self.matrix, np.eye(2)) and
                            not np.any(self.offset))

    @classmethod
    def identity(cls):
        return cls()

    def forward(self, x):
        """Original coordinates -> separable coordinates"""
        if self.is_identity:
            return x
        return _apply(self.matrix, x) + self.offset

    def inverse(self, y):
        """Separable coordinates -> original coordinates"""
        if self.is_identity:
            return y
        return _apply(self.inverse_matrix, np.asarray(y, dtype=float) - self.offset)

    def pull_vector(self, w):
        """Map a displacement or velocity vector back to original coordinates"""
        if self.is_identity:
            return w
        return _apply(self.inverse_matrix, w)


def _apply(matrix, w):
    # Elementwise so a particle's result does not depend on the batch size
    w = np.asarray(w, dtype=float)
    return np.stack([matrix[0, 0] * w[..., 0] + matrix[0, 1] * w[..., 1],
                     matrix[1, 0] * w[..., 0] + matrix[1, 1] * w[..., 1]], axis=-1)


class SeparableForm(object):
    """
    H(t, P, Q) = F(t, P) + G(t, Q) in the coordinates of `coordinate_map`.

    f = dF/dP depends on P only and g = dG/dQ on Q only, so that
        dP = -g(t, Q) dt,  dQ = f(t, P) dt.
    Subclasses implement the derivatives they can provide and list
    them in `provides`.
    """

    provides = ('F', 'G', 'f', 'g', 'df', 'dg', 'd2f', 'd2g')
    time_dependent = False

    def __init__(self, coordinate_map=None):
        self.coordinate_map = coordinate_map or CoordinateMap.identity()

    def has(self, name):
        return name in self.provides

    def F(self, t, p, driver=None):
        raise NotImplementedError()

    def G(self, t, q, driver=None):
        raise NotImplementedError()

    def f(self, t, p, driver=None):
        raise NotImplementedError()

    def g(self, t, q, driver=None):
        raise NotImplementedError()

    def df(self, t, p, driver=None):
        raise NotImplementedError()

    def dg(self, t, q, driver=None):
        raise NotImplementedError()

    def d2f(self, t, p, driver=None):
        raise NotImplementedError()

    def d2g(self, t, q, driver=None):
        raise NotImplementedError()

    def f_t(self, t, p, driver=None):
        raise NotImplementedError()

    def g_t(self, t, q, driver=None):
        raise NotImplementedError()

    def hamiltonian(self, t, y, driver=None):
        """F + G in separable coordinates"""
        y = np.asarray(y, dtype=float)
        return self.F(t, y[..., 0], driver) + self.G(t, y[..., 1], driver)

    def separable_velocity(self, t, y, driver=None):
        """(-g, f) in separable coordinates"""
        y = np.asarray(y, dtype=float)
        return np.stack([-self.g(t, y[..., 1], driver),
                         self.f(t, y[..., 0], driver)], axis=-1)

    def velocity(self, t, x, driver=None):
        """Velocity in original coordinates reconstructed from f and g"""
        cmap = self.coordinate_map
        y = cmap.forward(np.asarray(x, dtype=float))
        return cmap.pull_vector(self.separable_velocity(t, y, driver))


def _zeros_like(t, y):
    return np.zeros(np.broadcast(np.asarray(t), np.asarray(y)).shape)


class QuiescentForm(SeparableForm):
    """H == 0"""

    provides = SeparableForm.provides + ('f_t', 'g_t')

    def F(self, t, p, driver=None):
        return _zeros_like(t, p)

    G = f = g = df = dg = d2f = d2g = f_t = g_t = F


class CellularForm(SeparableForm):
    """
    Chaotic cellular flow split as
        F(t, p) = sin p - theta c(t) cos p
        G(t, q) = -sin q + theta c(t) cos q
    with c(t) = cos t, or c = driver for the OU driven variant.
    """

    def __init__(self, theta, driven=False):
        super(CellularForm, self).__init__()
        self.theta = float(theta)
        self.driven = driven
        self.time_dependent = not driven and self.theta != 0.0
        if not driven:
            self.provides = SeparableForm.provides + ('f_t', 'g_t')

    def _c(self, t, driver):
        if self.driven:
            assert driver is not None, "OU driven flow needs the driver value"
            return np.asarray(driver, dtype=float)
        return np.cos(t)

    def F(self, t, p, driver=None):
        return np.sin(p) - self.theta * self._c(t, driver) * np.cos(p)

    def G(self, t, q, driver=None):
        return -np.sin(q) + self.theta * self._c(t, driver) * np.cos(q)

    def f(self, t, p, driver=None):
        return np.cos(p) + self.theta * self._c(t, driver) * np.sin(p)

    def g(self, t, q, driver=None):
        return -np.cos(q) - self.theta * self._c(t, driver) * np.sin(q)

    def df(self, t, p, driver=None):
        return -np.sin(p) + self.theta * self._c(t, driver) * np.cos(p)

    def dg(self, t, q, driver=None):
        return np.sin(q) - self.theta * self._c(t, driver) * np.cos(q)

    def d2f(self, t, p, driver=None):
        return -np.cos(p) - self.theta * self._c(t, driver) * np.sin(p)

    def d2g(self, t, q, driver=None):
        return np.cos(q) + self.theta * self._c(t, driver) * np.sin(q)

    def f_t(self, t, p, driver=None):
        return -self.theta * np.sin(t) * np.sin(p)

    def g_t(self, t, q, driver=None):
        return self.theta * np.sin(t) * np.sin(q)


def rotated_map(k, offset_q=0.0):
    """P = k(p + q), Q = k(p - q) + offset_q"""
    matrix = k * np.array([[1.0, 1.0], [1.0, -1.0]])
    return CoordinateMap(matrix, [0.0, offset_q],
                         hamiltonian_scale=-1.0 / (2.0 * k * k))


class RotatedTaylorGreenForm(SeparableForm):
    """
    Steady Taylor-Green cells in rotated coordinates:
    f = k sin P, g = k sin Q, H = -k (cos P + cos Q)
    """

    provides = SeparableForm.provides + ('f_t', 'g_t')

    def __init__(self, k):
        super(RotatedTaylorGreenForm, self).__init__(rotated_map(k, math.pi))
        self.k = float(k)

    def F(self, t, p, driver=None):
        return -self.k * np.cos(p) + _zeros_like(t, p)

    def G(self, t, q, driver=None):
        return -self.k * np.cos(q) + _zeros_like(t, q)

    def f(self, t, p, driver=None):
        return self.k * np.sin(p) + _zeros_like(t, p)

    g = f

    def df(self, t, p, driver=None):
        return self.k * np.cos(p) + _zeros_like(t, p)

    dg = df

    def d2f(self, t, p, driver=None):
        return -self.k * np.sin(p) + _zeros_like(t, p)

    d2g = d2f

    def f_t(self, t, p, driver=None):
        return _zeros_like(t, p)

    g_t = f_t


class RotatedModulatedForm(SeparableForm):
    """
    Time-modulated Taylor-Green cells H = (1/k) A(t) cos(kp) sin(kq),
    A(t) = 1 + B sin(wt), in rotated coordinates:
    f = -k A cos P, g = k A cos Q
    """

    provides = SeparableForm.provides + ('f_t', 'g_t')

    def __init__(self, k, B, omega):
        super(RotatedModulatedForm, self).__init__(rotated_map(k))
        self.k = float(k)
        self.B = float(B)
        self.omega = float(omega)
        self.time_dependent = self.B != 0.0

    def _amp(self, t):
        return 1.0 + self.B * np.sin(self.omega * t)

    def _amp_t(self, t):
        return self.B * self.omega * np.cos(self.omega * t)

    def F(self, t, p, driver=None):
        return -self.k * self._amp(t) * np.sin(p)

    def G(self, t, q, driver=None):
        return self.k * self._amp(t) * np.sin(q)

    def f(self, t, p, driver=None):
        return -self.k * self._amp(t) * np.cos(p)

    def g(self, t, q, driver=None):
        return self.k * self._amp(t) * np.cos(q)

    def df(self, t, p, driver=None):
        return self.k * self._amp(t) * np.sin(p)

    def dg(self, t, q, driver=None):
        return -self.k * self._amp(t) * np.sin(q)

    def d2f(self, t, p, driver=None):
        return self.k * self._amp(t) * np.cos(p)

    def d2g(self, t, q, driver=None):
        return -self.k * self._amp(t) * np.cos(q)

    def f_t(self, t, p, driver=None):
        return -self.k * self._amp_t(t) * np.cos(p)

    def g_t(self, t, q, driver=None):
        return self.k * self._amp_t(t) * np.cos(q)


class FlowSpec(object):
    """
    A named velocity field family with its parameters.
    Immutable once constructed; evaluation is pure.
    """

    def __init__(self, family, params=None):
        """
        :param family: FlowFamily or its name
        :param params: dict of parameters, every parameter required by the
            family must be present (see FlowSpec.create for defaults)
        """
        family = parse_family(family)
        params = dict(params or {})
        for name in REQUIRED_PARAMS[family]:
            if params.get(name) is None:
                raise FlowConfigError(family.value, name)
        values = {}
        for name in REQUIRED_PARAMS[family]:
            values[name] = float(params[name])
        if 'k' in values:
            assert values['k'] > 0, "Wavenumber k must be positive"
        object.__setattr__(self, 'family', family)
        object.__setattr__(self, 'params', values)
        object.__setattr__(self, '_form', None)

    @classmethod
    def create(cls, family, **params):
        """Build a flow filling the family's missing parameters with DEFAULT_PARAMS"""
        family = parse_family(family)
        values = {}
        for name in REQUIRED_PARAMS[family]:
            value = params.get(name)
            values[name] = DEFAULT_PARAMS[name] if value is None else value
        return cls(family, values)

    def __setattr__(self, key, value):
        raise AttributeError("FlowSpec is immutable, cannot set '%s'" % key)

    def __getstate__(self):
        return {'family': self.family, 'params': self.params}

    def __setstate__(self, state):
        object.__setattr__(self, 'family', state['family'])
        object.__setattr__(self, 'params', state['params'])
        object.__setattr__(self, '_form', None)

    def __eq__(self, other):
        if not isinstance(other, FlowSpec):
            return False
        return self.family == other.family and self.params == other.params

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return hash((self.family, tuple(sorted(self.params.items()))))

    def __str__(self):
        params = ', '.join('%s=%g' % item for item in sorted(self.params.items()))
        return "FlowSpec(%s, %s)" % (self.family.value, params)

    def __repr__(self):
        return self.__str__()

    def get(self, name):
        return self.params[name]

    @property
    def needs_driver(self):
        """True if velocity evaluation needs the OU driver value"""
        return self.family == FlowFamily.OU_CELLULAR

    @property
    def space_period(self):
        """Spatial period per axis, or None for the quiescent flow"""
        if self.family == FlowFamily.QUIESCENT:
            return None
        if self.family in (FlowFamily.CHAOTIC_CELLULAR, FlowFamily.OU_CELLULAR):
            return 2.0 * math.pi
        return 2.0 * math.pi / self.params['k']

    @property
    def time_period(self):
        """Temporal period, None for steady flows and APERIODIC for OU driven ones"""
        family = self.family
        if family in (FlowFamily.QUIESCENT, FlowFamily.TAYLOR_GREEN):
            return None
        if family == FlowFamily.OU_CELLULAR:
            return APERIODIC
        if family == FlowFamily.CHAOTIC_CELLULAR:
            return None if self.params['theta'] == 0 else 2.0 * math.pi
        if self.params['B'] == 0:
            return None
        return 2.0 * math.pi / self.params['omega']

    @property
    def is_steady(self):
        return self.time_period is None

    def _phase(self, t):
        return self.params['B'] * np.sin(self.params['omega'] * np.asarray(t, dtype=float))

    def _cellular_c(self, t, driver):
        if self.family == FlowFamily.OU_CELLULAR:
            if driver is None:
                raise FlowConfigError(self.family.value, 'driver')
            return np.asarray(driver, dtype=float)
        return np.cos(t)

    def velocity(self, t, x, driver=None):
        """
        Velocity (v1, v2) at time t and positions x
        :param t: scalar or array broadcastable against x[..., 0]
        :param x: array of shape (..., 2)
        :param driver: OU value replacing cos(t) for the OU driven flow
        :return: array with the shape of x
        """
        x = np.asarray(x, dtype=float)
        p, q = x[..., 0], x[..., 1]
        family = self.family
        if family == FlowFamily.QUIESCENT:
            return np.zeros_like(x)
        if family in (FlowFamily.CHAOTIC_CELLULAR, FlowFamily.OU_CELLULAR):
            c = self.params['theta'] * self._cellular_c(t, driver)
            v1 = np.cos(q) + c * np.sin(q)
            v2 = np.cos(p) + c * np.sin(p)
        elif family == FlowFamily.TIME_DEPENDENT_TAYLOR_GREEN:
            k = self.params['k']
            amp = 1.0 + self._phase(t)
            v1 = -amp * np.cos(k * p) * np.cos(k * q)
            v2 = -amp * np.sin(k * p) * np.sin(k * q)
        else:
            k = self.params['k']
            phase = 0.0 if family == FlowFamily.TAYLOR_GREEN else self._phase(t)
            v1 = np.sin(k * p + phase) * np.cos(k * q)
            v2 = -np.cos(k * p + phase) * np.sin(k * q)
        return np.stack(np.broadcast_arrays(v1, v2), axis=-1)

    def hamiltonian(self, t, x, driver=None):
        """Stream function H with v = (-dH/dq, dH/dp)"""
        x = np.asarray(x, dtype=float)
        p, q = x[..., 0], x[..., 1]
        family = self.family
        if family == FlowFamily.QUIESCENT:
            return _zeros_like(t, p)
        if family in (FlowFamily.CHAOTIC_CELLULAR, FlowFamily.OU_CELLULAR):
            c = self.params['theta'] * self._cellular_c(t, driver)
            return np.sin(p) - np.sin(q) + c * (np.cos(q) - np.cos(p))
        k = self.params['k']
        if family == FlowFamily.TIME_DEPENDENT_TAYLOR_GREEN:
            amp = 1.0 + self._phase(t)
            return amp * np.cos(k * p) * np.sin(k * q) / k
        phase = 0.0 if family == FlowFamily.TAYLOR_GREEN else self._phase(t)
        return -np.sin(k * p + phase) * np.sin(k * q) / k + _zeros_like(t, p)

    @property
    def is_separable(self):
        family = self.family
        if family == FlowFamily.OSCILLATING_VORTEX:
            return self.params['B'] == 0
        return True

    def separable_form(self):
        """
        Return the SeparableForm of the flow
        :raise NotSeparableError: oscillating vortices with B != 0
        """
        if self._form is not None:
            return self._form
        family = self.family
        if family == FlowFamily.QUIESCENT:
            form = QuiescentForm()
        elif family == FlowFamily.CHAOTIC_CELLULAR:
            form = CellularForm(self.params['theta'])
        elif family == FlowFamily.OU_CELLULAR:
            form = CellularForm(self.params['theta'], driven=True)
        elif family == FlowFamily.TIME_DEPENDENT_TAYLOR_GREEN:
            form = RotatedModulatedForm(self.params['k'], self.params['B'],
                                        self.params['omega'])
        elif family == FlowFamily.TAYLOR_GREEN or self.params['B'] == 0:
            form = RotatedTaylorGreenForm(self.params['k'])
        else:
            raise NotSeparableError(family.value)
        object.__setattr__(self, '_form', form)
        return form


def velocity(flow, t, x, driver=None):
    """Velocity of `flow` at (t, x), see FlowSpec.velocity"""
    return flow.velocity(t, x, driver)


def hamiltonian(flow, t, x, driver=None):
    """Hamiltonian of `flow` at (t, x), see FlowSpec.hamiltonian"""
    return flow.hamiltonian(t, x, driver)


def separable_form(flow):
    """Separable form of `flow`, see FlowSpec.separable_form"""
    return flow.separable_form()
