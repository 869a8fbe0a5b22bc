#!/usr/bin/env python
"""
One step integrators for dx = v(t, x) dt + sigma dW:
Euler-Maruyama, Lie-Trotter splitting and Strang splitting.

The splitting schemes alternate a volume preserving deterministic substep
with an exact noise substep. Every function works on a single position of
shape (2,) or on a batch of shape (n, 2).
"""

import enum
import logging
import math

import numpy as np

from effdiff.utils import as_pair
from effdiff.utils import count_steps


logger = logging.getLogger(__name__)


class SchemeKind(enum.Enum):
    """Integrators selectable with the `scheme` key"""
    EULER_MARUYAMA = 'em'
    LIE_TROTTER = 'lt'
    STRANG = 'strang'


class ImplicitSolveDiverged(Exception):
    """The fixed point iteration of the implicit substep did not reach implicit_tol"""

    def __init__(self, residual, iterations, particles=None):
        msg = "Implicit substep residual %.3e after %d iterations" % (residual, iterations)
        if particles is not None and len(particles):
            msg += " (particles %s)" % list(particles[:5])
        msg += "; the step size is too large for this flow"
        super(ImplicitSolveDiverged, self).__init__(msg)
        self.residual = residual
        self.iterations = iterations
        self.particles = particles


class NonCommensurateHorizon(Exception):
    """The horizon is not a whole number of steps"""

    def __init__(self, horizon, tau):
        msg = "Horizon T=%r is not an integer multiple of dt=%r" % (horizon, tau)
        super(NonCommensurateHorizon, self).__init__(msg)
        self.horizon = horizon
        self.tau = tau


def parse_scheme(value):
    """Return the SchemeKind for 'em', 'lt' or 'strang'"""
    if isinstance(value, SchemeKind):
        return value
    return SchemeKind(str(value).strip().lower())


class SchemeConfig(object):
    """Integrator identity and its parameters"""

    default_kind = SchemeKind.LIE_TROTTER
    default_tau = 0.01
    # None picks alpha=1 (explicit) for separable flows, 1/2 otherwise
    default_alpha = None
    default_beta = 0.5
    default_implicit_max_iters = 8
    default_implicit_tol = 1e-12
    default_sigma = 0.1

    def __init__(self, kind=None, tau=None, alpha=None, beta=None,
                 implicit_max_iters=None, implicit_tol=None, sigma=None):
        self.kind = parse_scheme(SchemeConfig.default_kind if kind is None else kind)
        self.tau = float(SchemeConfig.default_tau if tau is None else tau)
        self.alpha = SchemeConfig.default_alpha if alpha is None else float(alpha)
        self.beta = float(SchemeConfig.default_beta if beta is None else beta)
        self.implicit_max_iters = int(SchemeConfig.default_implicit_max_iters
                                      if implicit_max_iters is None else implicit_max_iters)
        self.implicit_tol = float(SchemeConfig.default_implicit_tol
                                  if implicit_tol is None else implicit_tol)
        self.sigma = as_pair(SchemeConfig.default_sigma if sigma is None else sigma, 'sigma')
        assert self.tau > 0, "dt must be positive, got %s" % self.tau
        assert self.alpha is None or 0.0 <= self.alpha <= 1.0, "alpha must lie in [0, 1]"
        assert 0.0 <= self.beta <= 1.0, "beta must lie in [0, 1]"
        assert self.implicit_max_iters >= 1, "implicit_iters must be at least 1"
        assert self.implicit_tol > 0, "implicit_tol must be positive"
        assert np.all(self.sigma >= 0), "sigma must be non negative"

    def replace(self, **changes):
        """Copy of the config with some fields changed"""
        values = dict(kind=self.kind, tau=self.tau, alpha=self.alpha, beta=self.beta,
                      implicit_max_iters=self.implicit_max_iters,
                      implicit_tol=self.implicit_tol, sigma=self.sigma)
        values.update(changes)
        return SchemeConfig(**values)

    @property
    def d0(self):
        """Molecular diffusivity sigma^2 / 2 (first component)"""
        return 0.5 * self.sigma[0] ** 2

    @property
    def is_isotropic(self):
        return self.sigma[0] == self.sigma[1]

    def resolved_alpha(self, flow):
        if self.alpha is not None:
            return self.alpha
        return 1.0 if flow.is_separable else 0.5

    def uses_explicit_step(self, flow):
        """True when the deterministic substep is the explicit separable composition"""
        return flow.is_separable and self.resolved_alpha(flow) == 1.0

    def __str__(self):
        return "SchemeConfig(%s, dt=%g, alpha=%s, beta=%g, sigma=%s)" % (
            self.kind.value, self.tau, self.alpha, self.beta, list(self.sigma))


class StepState(object):
    """Time, position(s) and the frozen OU driver value(s) of the current step"""

    def __init__(self, t, x, driver=None):
        self.t = t
        self.x = x
        self.driver = driver

    def __str__(self):
        return "StepState(t=%g, x=%s, driver=%s)" % (self.t, self.x, self.driver)


def _explicit_separable(flow, s, h, t_eval):
    form = flow.separable_form()
    cmap = form.coordinate_map
    y = cmap.forward(s.x)
    p_new = y[..., 0] - h * form.g(t_eval, y[..., 1], s.driver)
    q_new = y[..., 1] + h * form.f(t_eval, p_new, s.driver)
    return cmap.inverse(np.stack([p_new, q_new], axis=-1))


def _implicit(flow, cfg, s, h, alpha, t_eval):
    x0 = np.asarray(s.x, dtype=float)

    def fixed_point_map(xs):
        point = np.stack([alpha * xs[..., 0] + (1.0 - alpha) * x0[..., 0],
                          (1.0 - alpha) * xs[..., 1] + alpha * x0[..., 1]], axis=-1)
        return x0 + h * flow.velocity(t_eval, point, s.driver)

    xs = x0 + h * flow.velocity(t_eval, x0, s.driver)
    # Each particle stops updating once its own residual is below tol
    active = np.ones(x0.shape[:-1], dtype=bool)
    residual = np.zeros(x0.shape[:-1])
    for _ in range(cfg.implicit_max_iters):
        new = fixed_point_map(xs)
        residual = np.max(np.abs(new - xs), axis=-1)
        xs = np.where(active[..., None], new, xs)
        active = active & (residual > cfg.implicit_tol)
        if not np.any(active):
            return xs
    worst = float(np.max(np.where(active, residual, 0.0)))
    raise ImplicitSolveDiverged(worst, cfg.implicit_max_iters,
                                np.flatnonzero(np.atleast_1d(active)))


def deterministic_substep(flow, cfg, s, h):
    """
    Volume preserving substep for dx = v dt over a step h.

    Separable flows with alpha == 1 use the explicit composition
        P* = P - h g(t + beta h, Q),  Q* = Q + h f(t + beta h, P*)
    in the flow's separable coordinates. Otherwise the implicit relations
        x1* = x1 + h v1(t + beta h, alpha x1* + (1 - alpha) x1, (1 - alpha) x2* + alpha x2)
        x2* = x2 + h v2(...same point...)
    are solved by fixed point iteration.
    :return: StepState at time t + h
    :raise ImplicitSolveDiverged: when the iteration does not converge
    """
    assert h > 0, "Substep must be positive, got %s" % h
    t_eval = s.t + cfg.beta * h
    if cfg.uses_explicit_step(flow):
        x_new = _explicit_separable(flow, s, h, t_eval)
    else:
        x_new = _implicit(flow, cfg, s, h, cfg.resolved_alpha(flow), t_eval)
    return StepState(s.t + h, x_new, s.driver)


def noise_substep(cfg, s, dW):
    """x <- x + sigma * dW, time unchanged"""
    return StepState(s.t, s.x + cfg.sigma * dW, s.driver)


def step(flow, cfg, s, noise):
    """
    One full step of length cfg.tau, consuming one block of `noise`.

    All kinds use the same full step increment dW. Strang splits it into two
    half step increments with a Brownian bridge so that they sum to dW.
    """
    tau = cfg.tau
    z = noise.draw()
    root_tau = math.sqrt(tau)
    dW = root_tau * z[..., :2]
    kind = cfg.kind
    if kind == SchemeKind.EULER_MARUYAMA:
        drift = flow.velocity(s.t, s.x, s.driver)
        return StepState(s.t + tau, s.x + tau * drift + cfg.sigma * dW, s.driver)
    if kind == SchemeKind.LIE_TROTTER:
        return noise_substep(cfg, deterministic_substep(flow, cfg, s, tau), dW)
    bridge = 0.5 * root_tau * z[..., 2:4]
    half = noise_substep(cfg, s, 0.5 * dW + bridge)
    half = deterministic_substep(flow, cfg, half, tau)
    return noise_substep(cfg, half, 0.5 * dW - bridge)


def sample_steps(times, tau):
    """
    Step indices of the observation times
    :raise NonCommensurateHorizon: a time is off the step grid
    """
    indices = []
    for t in times:
        n_steps = count_steps(t, tau)
        if n_steps is None:
            raise NonCommensurateHorizon(t, tau)
        indices.append(n_steps)
    return indices


class SchemeStepper(object):
    """Binds a flow and a scheme; anything with tau, needs_driver and step() can drive run_steps"""

    def __init__(self, flow, cfg):
        self.flow = flow
        self.cfg = cfg

    @property
    def tau(self):
        return self.cfg.tau

    @property
    def needs_driver(self):
        return self.flow.needs_driver

    def step(self, state, noise):
        return step(self.flow, self.cfg, state, noise)

    def __str__(self):
        return "SchemeStepper(%s, %s)" % (self.flow, self.cfg)


def run_steps(stepper, x0, horizon, noise, observer=None, sample_times=None, driver=None):
    """
    Apply stepper.step horizon / tau times starting at t = 0
    :param x0: initial position, shape (2,) or a batch (n, 2)
    :param noise: NoiseStream positioned at the first step
    :param observer: callable(t, x), invoked at sample_times, or at every
        step (t = 0 included) when sample_times is None
    :param driver: OUDriver, required when stepper.needs_driver; particle i
        follows OU path i mod driver.n_paths with the value frozen over each step
    :return: final StepState
    :raise NonCommensurateHorizon: horizon is not a multiple of tau
    """
    tau = stepper.tau
    n_steps = count_steps(horizon, tau)
    if n_steps is None:
        raise NonCommensurateHorizon(horizon, tau)
    wanted = None
    if sample_times is not None:
        wanted = set(sample_steps(sample_times, tau))
    x0 = np.asarray(x0, dtype=float)
    state = StepState(0.0, x0.copy())
    eta = path_index = None
    if stepper.needs_driver:
        assert driver is not None, "%s needs an OU driver" % stepper
        eta = driver.initial()
        path_index = (noise.particle_index + np.arange(noise.size)) % driver.n_paths
        if noise.count is None:
            path_index = path_index[0]
    if observer is not None and (wanted is None or 0 in wanted):
        observer(state.t, state.x)
    for k in range(n_steps):
        if eta is not None:
            state.driver = eta[path_index]
        state = stepper.step(state, noise)
        # Rebuilt from the counter, no accumulated rounding
        state.t = (k + 1) * tau
        if eta is not None:
            eta = driver.advance(eta, k, tau)
        if observer is not None and (wanted is None or k + 1 in wanted):
            observer(state.t, state.x)
    return state


def integrate_path(flow, cfg, x0, horizon, noise, observer=None,
                   sample_times=None, driver=None):
    """run_steps with the scheme `cfg` on `flow`"""
    return run_steps(SchemeStepper(flow, cfg), x0, horizon, noise,
                     observer=observer, sample_times=sample_times, driver=driver)
