#!/usr/bin/env python
"""
First order modified equations of the splitting and Euler-Maruyama schemes
for separable Hamiltonian flows H = F(t, P) + G(t, Q).

For the splitting scheme the modified drift is the symplectic gradient of the
asymptotic Hamiltonian
    H_dt = H - dt (f g / 2 + sigma^2 (f' + g') / 4)
and hence divergence free; for Euler-Maruyama the f' g term flips sign and
the drift is not divergence free. Everything is expressed in the coordinates
of the form's CoordinateMap, where the noise amplitude is noise_scale * sigma.
"""

import enum
import logging
import math

import numpy as np

from effdiff.ensemble import EnsembleConfig
from effdiff.ensemble import run_ensemble
from effdiff.noise import NoiseStream
from effdiff.sde_schemes import SchemeKind
from effdiff.sde_schemes import StepState
from effdiff.sde_schemes import integrate_path


logger = logging.getLogger(__name__)


class Variant(enum.Enum):
    SYMPLECTIC_SPLIT = 'split'
    EULER_MARUYAMA = 'em'


SPACE_DERIVATIVES = ('f', 'g', 'df', 'dg', 'd2f', 'd2g')
TIME_DERIVATIVES = ('f_t', 'g_t')


class MissingDerivative(Exception):
    """The separable form does not provide a derivative the modified flow needs"""

    def __init__(self, name):
        super(MissingDerivative, self).__init__(
            "Separable form does not provide '%s'" % name)
        self.name = name


def parse_variant(value):
    if isinstance(value, Variant):
        return value
    return Variant(str(value).strip().lower())


def variant_for(kind):
    """Modified flow variant matching a scheme kind"""
    if kind == SchemeKind.EULER_MARUYAMA:
        return Variant.EULER_MARUYAMA
    if kind == SchemeKind.LIE_TROTTER:
        return Variant.SYMPLECTIC_SPLIT
    raise ValueError("No first order modified flow for scheme '%s'" % kind.value)


class ModifiedFlow(object):
    """
    Drift and diffusion of the modified SDE
        dY = drift(t, Y) dt + diffusion_matrix(t, Y) dW
    """

    def __init__(self, form, dt, sigma, variant, beta):
        self.form = form
        self.dt = float(dt)
        self.sigma = float(sigma)
        self.variant = variant
        self.beta = float(beta)
        self.time_terms = form.time_dependent and self.beta != 0.5

    def _sign(self):
        return 1.0 if self.variant == Variant.SYMPLECTIC_SPLIT else -1.0

    def drift(self, t, y, driver=None):
        form = self.form
        y = np.asarray(y, dtype=float)
        p, q = y[..., 0], y[..., 1]
        f = form.f(t, p, driver)
        g = form.g(t, q, driver)
        drift_p = -g
        drift_q = f
        if self.dt:
            noise = 0.25 * self.sigma ** 2
            drift_p = drift_p + self.dt * (0.5 * f * form.dg(t, q, driver) +
                                           noise * form.d2g(t, q, driver))
            drift_q = drift_q - self.dt * (self._sign() * 0.5 * form.df(t, p, driver) * g +
                                           noise * form.d2f(t, p, driver))
        if self.time_terms and self.dt:
            lag = (0.5 - self.beta) * self.dt
            drift_p = drift_p + lag * form.g_t(t, q, driver)
            drift_q = drift_q - lag * form.f_t(t, p, driver)
        return np.stack(np.broadcast_arrays(drift_p, drift_q), axis=-1)

    def correction_matrix(self, t, y, driver=None):
        """d1 = [[0, g'/2], [-f'/2, 0]]"""
        y = np.asarray(y, dtype=float)
        dg = self.form.dg(t, y[..., 1], driver)
        df = self.form.df(t, y[..., 0], driver)
        dg, df = np.broadcast_arrays(dg, df)
        d1 = np.zeros(dg.shape + (2, 2))
        d1[..., 0, 1] = 0.5 * dg
        d1[..., 1, 0] = -0.5 * df
        return d1

    def diffusion_matrix(self, t, y, driver=None):
        """sigma (I + dt d1)"""
        d1 = self.correction_matrix(t, y, driver)
        return self.sigma * (np.eye(2) + self.dt * d1)

    def diffusion_identity_residual(self, t, y, driver=None):
        """
        max |(I + dt d1)(I + dt d1)^T - (I + dt D1)| with
        D1 = [[dt g'^2 / 4, (g' - f') / 2], [(g' - f') / 2, dt f'^2 / 4]]
        """
        y = np.asarray(y, dtype=float)
        dt = self.dt
        a = np.eye(2) + dt * self.correction_matrix(t, y, driver)
        lhs = np.matmul(a, np.swapaxes(a, -1, -2))
        dg = self.form.dg(t, y[..., 1], driver)
        df = self.form.df(t, y[..., 0], driver)
        dg, df = np.broadcast_arrays(dg, df)
        d_one = np.empty(dg.shape + (2, 2))
        d_one[..., 0, 0] = 0.25 * dt * dg ** 2
        d_one[..., 1, 1] = 0.25 * dt * df ** 2
        d_one[..., 0, 1] = d_one[..., 1, 0] = 0.5 * (dg - df)
        return float(np.max(np.abs(lhs - (np.eye(2) + dt * d_one))))

    def __str__(self):
        return "ModifiedFlow(%s, dt=%g, sigma=%g, beta=%g)" % (
            self.variant.value, self.dt, self.sigma, self.beta)


class ModifiedHamiltonian(object):
    """H_dt = F + G - dt (f g / 2 + sigma^2 (f' + g') / 4), for steady forms"""

    def __init__(self, form, dt, sigma):
        self.form = form
        self.dt = float(dt)
        self.sigma = float(sigma)

    def __call__(self, t, y, driver=None):
        form = self.form
        y = np.asarray(y, dtype=float)
        p, q = y[..., 0], y[..., 1]
        base = form.hamiltonian(t, y, driver)
        f = form.f(t, p, driver)
        g = form.g(t, q, driver)
        curvature = form.df(t, p, driver) + form.dg(t, q, driver)
        return base - self.dt * (0.5 * f * g + 0.25 * self.sigma ** 2 * curvature)


def _check_provides(form, names):
    for name in names:
        if not form.has(name):
            raise MissingDerivative(name)


def build_modified_flow(form, dt, sigma, variant, beta=None):
    """
    :param form: SeparableForm
    :param dt: analysed step size
    :param sigma: noise amplitude in the form's coordinates
    :param variant: Variant or its name
    :param beta: time offset of the deterministic substep; default 1/2 for
        the splitting scheme and 0 for Euler-Maruyama
    :raise MissingDerivative: the form lacks f, g or one of their derivatives,
        or f_t, g_t for time dependent forms when beta != 1/2
    """
    variant = parse_variant(variant)
    if beta is None:
        beta = 0.5 if variant == Variant.SYMPLECTIC_SPLIT else 0.0
    assert dt >= 0, "dt must be non negative"
    assert sigma >= 0, "sigma must be non negative"
    _check_provides(form, SPACE_DERIVATIVES)
    if form.time_dependent and beta != 0.5:
        _check_provides(form, TIME_DERIVATIVES)
    return ModifiedFlow(form, dt, sigma, variant, beta)


def modified_flow_for(flow, cfg):
    """ModifiedFlow of the scheme `cfg` applied to `flow`, in separable coordinates"""
    assert cfg.is_isotropic, "Modified flows need isotropic noise, got %s" % cfg.sigma
    form = flow.separable_form()
    variant = variant_for(cfg.kind)
    beta = cfg.beta if variant == Variant.SYMPLECTIC_SPLIT else 0.0
    sigma = form.coordinate_map.noise_scale * cfg.sigma[0]
    return build_modified_flow(form, cfg.tau, sigma, variant, beta=beta)


class DivergenceReport(object):

    def __init__(self, variant, max_abs, mean_abs, n_samples):
        self.variant = variant
        self.max_abs = max_abs
        self.mean_abs = mean_abs
        self.n_samples = n_samples

    def passed(self, tol=1e-6):
        return self.max_abs < tol

    def __str__(self):
        return "DivergenceReport(%s, max=%.3e, mean=%.3e, n=%d)" % (
            self.variant.value, self.max_abs, self.mean_abs, self.n_samples)


def verify_divergence_free(mf, n_samples=10000, h=1e-5, seed=0):
    """
    Central difference divergence of the modified drift at random (t, P, Q)
    in [0, 2 pi)^3; OU driven forms get random driver values in [-2, 2].
    """
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 2.0 * math.pi, n_samples)
    y = rng.uniform(0.0, 2.0 * math.pi, (n_samples, 2))
    driver = None
    if getattr(mf.form, 'driven', False):
        driver = rng.uniform(-2.0, 2.0, n_samples)
    step_p = np.array([h, 0.0])
    step_q = np.array([0.0, h])
    div = ((mf.drift(t, y + step_p, driver)[:, 0] - mf.drift(t, y - step_p, driver)[:, 0]) +
           (mf.drift(t, y + step_q, driver)[:, 1] - mf.drift(t, y - step_q, driver)[:, 1])) / (2.0 * h)
    report = DivergenceReport(mf.variant, float(np.max(np.abs(div))),
                              float(np.mean(np.abs(div))), n_samples)
    logger.debug("%s: %s", mf, report)
    return report


class ModifiedFlowStepper(object):
    """Euler-Maruyama on a ModifiedFlow; positions stay in original coordinates"""

    def __init__(self, mf, tau, needs_driver=False):
        assert tau > 0, "Step size must be positive"
        self.mf = mf
        self.tau = float(tau)
        self.needs_driver = needs_driver

    def step(self, state, noise):
        cmap = self.mf.form.coordinate_map
        dW = math.sqrt(self.tau) * noise.draw()[..., :2]
        y = cmap.forward(np.asarray(state.x, dtype=float))
        drift = self.mf.drift(state.t, y, state.driver)
        b = self.mf.diffusion_matrix(state.t, y, state.driver)
        kick = np.stack([b[..., 0, 0] * dW[..., 0] + b[..., 0, 1] * dW[..., 1],
                         b[..., 1, 0] * dW[..., 0] + b[..., 1, 1] * dW[..., 1]], axis=-1)
        x_new = cmap.inverse(y + self.tau * drift + kick)
        return StepState(state.t + self.tau, x_new, state.driver)

    def __str__(self):
        return "ModifiedFlowStepper(%s, dt=%g)" % (self.mf, self.tau)


class ModifiedComparison(object):
    """Scheme at the coarse step against Euler-Maruyama on its modified flow"""

    def __init__(self, variant, coarse, fine, tau_coarse, tau_fine):
        self.variant = variant
        self.coarse = coarse
        self.fine = fine
        self.tau_coarse = tau_coarse
        self.tau_fine = tau_fine

    @property
    def times(self):
        return self.coarse.times

    @property
    def gap(self):
        """Relative gap of 2 (D11 + D22) at every sample time"""
        return np.abs(self.coarse.spread - self.fine.spread) / np.abs(self.fine.spread)

    @property
    def long_time_gap(self):
        """Relative gap of the last decade means of 2 (D11 + D22)"""
        last = self.times >= self.times[-1] / 10.0 * (1.0 - 1e-12)
        coarse = self.coarse.spread[last].mean()
        fine = self.fine.spread[last].mean()
        return abs(coarse - fine) / abs(fine)

    columns = ('t', 'coarse_D11', 'coarse_D22', 'coarse_spread', 'coarse_se',
               'modified_D11', 'modified_D22', 'modified_spread', 'modified_se', 'gap')

    def rows(self):
        def spread_se(est):
            return 2.0 * np.hypot(est.stderr[:, 0, 0], est.stderr[:, 1, 1])
        coarse_se = spread_se(self.coarse)
        fine_se = spread_se(self.fine)
        gap = self.gap
        for m, t in enumerate(self.times):
            yield [float(t),
                   float(self.coarse.D[m, 0, 0]), float(self.coarse.D[m, 1, 1]),
                   float(self.coarse.spread[m]), float(coarse_se[m]),
                   float(self.fine.D[m, 0, 0]), float(self.fine.D[m, 1, 1]),
                   float(self.fine.spread[m]), float(fine_se[m]), float(gap[m])]


def compare_against_modified(base, fine_factor=25):
    """
    Run `base` as is, then Euler-Maruyama at dt / fine_factor on the modified
    flow of its scheme, both observed at the same times
    :param base: EnsembleConfig; its scheme sets the coarse step and the variant
    :param fine_factor: integer >= 10
    :return: ModifiedComparison
    """
    assert int(fine_factor) == fine_factor and fine_factor >= 10, \
        "fine_factor must be an integer >= 10, got %s" % fine_factor
    mf = modified_flow_for(base.flow, base.scheme)
    coarse = run_ensemble(base)
    tau_fine = base.scheme.tau / int(fine_factor)
    stepper = ModifiedFlowStepper(mf, tau_fine, needs_driver=base.flow.needs_driver)
    fine_cfg = EnsembleConfig(flow=base.flow, scheme=base.scheme, ou=base.ou,
                              n_particles=base.n_particles, x0=base.x0,
                              horizon=base.horizon, sample_times=coarse.times,
                              n_ou=base.n_ou, seed=base.seed, threads=base.threads,
                              stepper=stepper)
    fine = run_ensemble(fine_cfg)
    comparison = ModifiedComparison(mf.variant, coarse, fine, base.scheme.tau, tau_fine)
    logger.info("Modified flow comparison (%s): long time gap %.3g",
                mf.variant.value, comparison.long_time_gap)
    return comparison


class HamiltonianDrift(object):
    """Largest deviation of H and H_dt from their initial values along a path"""

    def __init__(self, hamiltonian, modified):
        self.hamiltonian = hamiltonian
        self.modified = modified

    def __str__(self):
        return "HamiltonianDrift(H=%.3e, H_dt=%.3e)" % (self.hamiltonian, self.modified)


def hamiltonian_drift(flow, cfg, x0, horizon):
    """
    Integrate `flow` without noise from x0 and track H and the asymptotic
    Hamiltonian H_dt in separable coordinates
    :return: HamiltonianDrift
    """
    form = flow.separable_form()
    assert not form.time_dependent, "Hamiltonian drift needs a steady flow"
    silent = cfg.replace(sigma=0.0)
    cmap = form.coordinate_map
    modified = ModifiedHamiltonian(form, silent.tau, 0.0)
    y0 = cmap.forward(np.asarray(x0, dtype=float))
    start = (float(form.hamiltonian(0.0, y0)), float(modified(0.0, y0)))
    worst = [0.0, 0.0]

    def observe(t, x):
        y = cmap.forward(x)
        worst[0] = max(worst[0], float(np.max(np.abs(form.hamiltonian(t, y) - start[0]))))
        worst[1] = max(worst[1], float(np.max(np.abs(modified(t, y) - start[1]))))

    integrate_path(flow, silent, x0, horizon, NoiseStream(0), observer=observe)
    return HamiltonianDrift(worst[0], worst[1])
