#!/usr/bin/env python
"""
Monte-Carlo engine for the Lagrangian effective diffusivity

    D_ij(t) = < (x_i(t) - x_i(0)) (x_j(t) - x_j(0)) > / (2 t)

Particles are integrated in vectorised contiguous chunks, optionally in a
pool of worker processes. Noise is keyed by particle index, and chunks are
concatenated in index order before the reduction, so the result does not
depend on the number of workers.
"""

import hashlib
import itertools
import logging
import math
from multiprocessing import Pool

import numpy as np

from effdiff.flows import FlowSpec
from effdiff.flows import DEFAULT_PARAMS
from effdiff.noise import NoiseStream
from effdiff.noise import OUDriver
from effdiff.noise import OUParams
from effdiff.sde_schemes import ImplicitSolveDiverged
from effdiff.sde_schemes import NonCommensurateHorizon
from effdiff.sde_schemes import SchemeConfig
from effdiff.sde_schemes import SchemeStepper
from effdiff.sde_schemes import run_steps
from effdiff.sde_schemes import sample_steps
from effdiff.utils import as_pair
from effdiff.utils import count_steps


logger = logging.getLogger(__name__)


GEOMETRIC = 'geometric'
LINEAR = 'linear'

CSV_COLUMNS = ('t', 'D11', 'D12', 'D22', 'se11', 'se12', 'se22', 'n')

# Marker in the first estimate column of a row that stands for an error
FAILED = 'FAILED'

# Entries of the symmetric 2x2 estimate, in CSV order
ENTRIES = ((0, 0), (0, 1), (1, 1))

FLOW_KEYS = ('k', 'B', 'omega', 'theta')
SWEEP_KEYS = ('family', 'sigma', 'd0') + FLOW_KEYS + (
    'dt', 'scheme', 'alpha', 'beta', 'T', 'n_particles')


class ParticleIntegrationError(Exception):
    """Integration of one particle failed; keeps the original error as `cause`"""

    def __init__(self, particle_index, step, cause):
        msg = "Particle %d failed at step %d: %s" % (particle_index, step, cause)
        super(ParticleIntegrationError, self).__init__(msg)
        self.particle_index = particle_index
        self.step = step
        self.cause = cause


class InsufficientHorizon(Exception):
    """The sample times are too few or too short for the diagnostics"""

    def __init__(self, span_decades, n_times):
        msg = ("Diagnostics need at least 10 sample times spanning 2 decades, "
               "got %d times spanning %.2f decades" % (n_times, span_decades))
        super(InsufficientHorizon, self).__init__(msg)
        self.span_decades = span_decades
        self.n_times = n_times


def step_rule(d0, floor=0.0, cap=0.1, horizon=None):
    """
    Step size proportional to the molecular diffusivity, tau = min(max(d0, floor), cap).
    With `horizon`, tau is shrunk to the nearest value dividing it.
    """
    assert d0 > 0, "d0 must be positive"
    tau = min(max(d0, floor), cap)
    if horizon is not None:
        tau = float(horizon) / math.ceil(float(horizon) / tau - 1e-9)
    return tau


def sample_grid(horizon, tau, spacing=GEOMETRIC, per_decade=10, first=None, count=100):
    """
    Observation times on the step grid, ending at the horizon
    :param spacing: GEOMETRIC (per_decade points per decade from `first`,
        default horizon / 1000) or LINEAR (`count` equally spaced points)
    :return: increasing array of positive times, each a multiple of tau
    """
    n_steps = count_steps(horizon, tau)
    if n_steps is None:
        raise NonCommensurateHorizon(horizon, tau)
    assert n_steps >= 1, "Horizon must hold at least one step"
    if spacing == LINEAR:
        steps = np.round(np.linspace(n_steps / float(count), n_steps, count))
    elif spacing == GEOMETRIC:
        first = horizon / 1000.0 if first is None else first
        first = max(first, tau)
        decades = math.log10(horizon / first)
        n_points = max(2, int(math.ceil(decades * per_decade)) + 1)
        steps = np.round(np.geomspace(first, horizon, n_points) / tau)
    else:
        raise ValueError("Unknown sample spacing '%s'" % spacing)
    steps = np.unique(np.clip(steps, 1, n_steps)).astype(np.int64)
    return steps * tau


class EnsembleConfig(object):
    """Everything run_ensemble needs; defaults follow the chaotic cellular experiments"""

    default_n_particles = 5000
    default_x0 = (0.0, 0.0)
    default_horizon = 5000.0
    default_spacing = GEOMETRIC
    default_per_decade = 10
    default_n_ou = 40
    default_seed = 20200623
    default_threads = 1

    def __init__(self, flow=None, scheme=None, ou=None, n_particles=None, x0=None,
                 horizon=None, sample_times=None, spacing=None, per_decade=None,
                 n_ou=None, seed=None, threads=None, stepper=None):
        """
        :param flow: FlowSpec, default chaotic cellular theta=0.1
        :param scheme: SchemeConfig
        :param ou: OUParams of the driver, used by OU driven flows only
        :param sample_times: explicit observation times, default sample_grid()
        :param stepper: replaces SchemeStepper(flow, scheme), e.g. a modified flow stepper
        """
        self.flow = flow or FlowSpec.create('chaotic-cellular')
        self.scheme = scheme or SchemeConfig()
        self.ou = ou or OUParams()
        self.n_particles = int(EnsembleConfig.default_n_particles
                               if n_particles is None else n_particles)
        self.x0 = as_pair(EnsembleConfig.default_x0 if x0 is None else x0, 'x0')
        self.horizon = float(EnsembleConfig.default_horizon if horizon is None else horizon)
        self.spacing = EnsembleConfig.default_spacing if spacing is None else spacing
        self.per_decade = int(EnsembleConfig.default_per_decade if per_decade is None else per_decade)
        self.n_ou = int(EnsembleConfig.default_n_ou if n_ou is None else n_ou)
        self.seed = int(EnsembleConfig.default_seed if seed is None else seed)
        self.threads = int(EnsembleConfig.default_threads if threads is None else threads)
        self._stepper = stepper
        self._sample_times = None
        if sample_times is not None:
            self._sample_times = np.asarray(sample_times, dtype=float)
        assert self.n_particles >= 2, "Need at least 2 particles, got %d" % self.n_particles
        assert self.horizon > 0, "Horizon T must be positive"
        assert self.threads >= 1, "threads must be at least 1"
        assert self.per_decade >= 1, "samples_per_decade must be at least 1"
        assert self.n_ou >= 1, "n_ou must be at least 1"
        if self.stepper.needs_driver:
            assert self.n_ou >= 2, "Need at least 2 OU paths for a standard error"
            assert self.n_particles >= self.n_ou, "Need at least one particle per OU path"

    @property
    def stepper(self):
        if self._stepper is not None:
            return self._stepper
        return SchemeStepper(self.flow, self.scheme)

    @property
    def tau(self):
        return self.stepper.tau

    @property
    def sample_times(self):
        if self._sample_times is not None:
            return self._sample_times
        return sample_grid(self.horizon, self.tau, self.spacing, self.per_decade)

    def with_overrides(self, **overrides):
        """
        Copy with flat keys replaced: family, sigma, d0, k, B, omega, theta, dt,
        scheme, alpha, beta, implicit_iters, implicit_tol, T, n_particles, seed,
        threads, n_ou, theta_ou, mu_ou, sigma_ou
        """
        family = overrides.pop('family', self.flow.family)
        params = dict(self.flow.params)
        for name in FLOW_KEYS:
            if name in overrides:
                params[name] = overrides.pop(name)
        for name in FLOW_KEYS:
            params.setdefault(name, DEFAULT_PARAMS[name])
        flow = FlowSpec.create(family, **params)

        scheme_changes = {}
        if 'd0' in overrides:
            d0 = float(overrides.pop('d0'))
            scheme_changes['sigma'] = math.sqrt(2.0 * d0)
        if 'sigma' in overrides:
            scheme_changes['sigma'] = overrides.pop('sigma')
        renames = {'dt': 'tau', 'scheme': 'kind', 'alpha': 'alpha', 'beta': 'beta',
                   'implicit_iters': 'implicit_max_iters', 'implicit_tol': 'implicit_tol'}
        for key, field in renames.items():
            if key in overrides:
                scheme_changes[field] = overrides.pop(key)
        scheme = self.scheme.replace(**scheme_changes)

        ou = OUParams(theta_ou=overrides.pop('theta_ou', self.ou.theta_ou),
                      mu_ou=overrides.pop('mu_ou', self.ou.mu_ou),
                      sigma_ou=overrides.pop('sigma_ou', self.ou.sigma_ou))
        horizon = float(overrides.pop('T', self.horizon))
        values = dict(n_particles=self.n_particles, x0=self.x0, spacing=self.spacing,
                      per_decade=self.per_decade, n_ou=self.n_ou, seed=self.seed,
                      threads=self.threads)
        for key in list(overrides):
            if key in values:
                values[key] = overrides.pop(key)
        if overrides:
            raise KeyError("Unknown ensemble keys: %s" % sorted(overrides))
        sample_times = None
        if self._sample_times is not None and horizon == self.horizon:
            sample_times = self._sample_times
        return EnsembleConfig(flow=flow, scheme=scheme, ou=ou, horizon=horizon,
                              sample_times=sample_times, **values)

    def __str__(self):
        return "EnsembleConfig(%s, %s, n=%d, T=%g, seed=%d, threads=%d)" % (
            self.flow, self.stepper, self.n_particles, self.horizon, self.seed, self.threads)


class DiffusivityEstimate(object):
    """
    Time series of the 2x2 estimate with per entry standard errors.
    `per_path` holds the per OU path (D11, D12, D22) with shape
    (n_times, n_ou, 3) for OU driven runs, None otherwise.
    """

    def __init__(self, times, D, stderr, n_effective, per_path=None, n_particles=None):
        self.times = np.asarray(times, dtype=float)
        self.D = np.asarray(D, dtype=float)
        self.stderr = np.asarray(stderr, dtype=float)
        self.n_effective = int(n_effective)
        self.per_path = per_path
        self.n_particles = n_particles if n_particles is not None else n_effective

    @property
    def final(self):
        """Estimate at the horizon"""
        return self.D[-1]

    @property
    def final_stderr(self):
        return self.stderr[-1]

    @property
    def trace(self):
        return self.D[:, 0, 0] + self.D[:, 1, 1]

    @property
    def spread(self):
        """<dx1^2 + dx2^2> / t == 2 (D11 + D22)"""
        return 2.0 * self.trace

    def rows(self):
        """CSV rows in CSV_COLUMNS order"""
        for m, t in enumerate(self.times):
            values = [self.D[m][ij] for ij in ENTRIES] + [self.stderr[m][ij] for ij in ENTRIES]
            yield [float(t)] + [float(v) for v in values] + [self.n_effective]

    def __str__(self):
        return "DiffusivityEstimate(T=%g, D11=%.6g, D12=%.3g, D22=%.6g, n=%d)" % (
            self.times[-1], self.D[-1, 0, 0], self.D[-1, 0, 1], self.D[-1, 1, 1],
            self.n_effective)


def _chunks(n_particles, n_chunks):
    n_chunks = max(1, min(n_chunks, n_particles))
    bounds = np.linspace(0, n_particles, n_chunks + 1).astype(int)
    return [(int(lo), int(hi - lo)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def _integrate_chunk(task):
    """Displacements of particles first .. first + count - 1 at the sample times"""
    cfg, first, count = task
    stepper = cfg.stepper
    times = cfg.sample_times
    columns = dict((k, m) for m, k in enumerate(sample_steps(times, stepper.tau)))
    x0 = np.tile(cfg.x0, (count, 1))
    out = np.empty((len(times), count, 2))
    noise = NoiseStream(cfg.seed, first, 0, count)
    driver = OUDriver(cfg.ou, cfg.seed, cfg.n_ou) if stepper.needs_driver else None
    progress = {'step': 0}

    def observe(t, x):
        k = progress['step']
        bad = ~np.all(np.isfinite(x), axis=-1)
        if np.any(bad):
            raise ParticleIntegrationError(first + int(np.argmax(bad)), k,
                                           FloatingPointError("non-finite position"))
        if k in columns:
            out[columns[k]] = x - x0
        progress['step'] = k + 1

    logger.debug("Chunk of %d particles from index %d", count, first)
    try:
        with np.errstate(over='ignore', invalid='ignore'):
            run_steps(stepper, x0, cfg.horizon, noise, observer=observe, driver=driver)
    except ImplicitSolveDiverged as exc:
        index = first + int(exc.particles[0]) if exc.particles is not None and len(exc.particles) else first
        raise ParticleIntegrationError(index, progress['step'], exc)
    except (ParticleIntegrationError, NonCommensurateHorizon):
        raise
    except Exception as exc:
        raise ParticleIntegrationError(first, progress['step'], exc)
    return out


def integrate_displacements(cfg):
    """
    Displacements of every particle at every sample time
    :return: array of shape (n_times, n_particles, 2) in particle index order
    """
    tasks = [(cfg, first, count) for first, count in _chunks(cfg.n_particles, cfg.threads)]
    if cfg.threads == 1:
        parts = [_integrate_chunk(task) for task in tasks]
    else:
        pool = Pool(processes=cfg.threads)
        try:
            parts = pool.map(_integrate_chunk, tasks)
        finally:
            pool.close()
            pool.join()
    return np.concatenate(parts, axis=1)


def _products(displacements):
    d = displacements
    return np.stack([d[..., i] * d[..., j] for i, j in ENTRIES], axis=-1)


def _assemble(times, means, errors):
    n_times = len(times)
    D = np.empty((n_times, 2, 2))
    se = np.empty((n_times, 2, 2))
    two_t = 2.0 * times
    for e, (i, j) in enumerate(ENTRIES):
        D[:, i, j] = D[:, j, i] = means[:, e] / two_t
        se[:, i, j] = se[:, j, i] = errors[:, e] / two_t
    return D, se


def estimate_from_displacements(times, displacements, n_ou=None):
    """
    Reduce displacements (n_times, n_particles, 2) to a DiffusivityEstimate.
    With n_ou, particle i belongs to OU path i mod n_ou; D is the mean over
    path averages and the standard error is the between path one.
    """
    times = np.asarray(times, dtype=float)
    products = _products(displacements)
    n_particles = products.shape[1]
    if n_ou is None:
        means = products.mean(axis=1)
        errors = products.std(axis=1, ddof=1) / math.sqrt(n_particles)
        D, se = _assemble(times, means, errors)
        return DiffusivityEstimate(times, D, se, n_particles)
    paths = np.arange(n_particles) % n_ou
    counts = np.bincount(paths, minlength=n_ou).astype(float)
    path_means = np.empty((len(times), n_ou, 3))
    for m in range(len(times)):
        for e in range(3):
            path_means[m, :, e] = np.bincount(paths, weights=products[m, :, e],
                                              minlength=n_ou) / counts
    means = path_means.mean(axis=1)
    errors = path_means.std(axis=1, ddof=1) / math.sqrt(n_ou)
    D, se = _assemble(times, means, errors)
    per_path = path_means / (2.0 * times)[:, None, None]
    return DiffusivityEstimate(times, D, se, n_ou, per_path=per_path, n_particles=n_particles)


def run_ensemble(cfg):
    """
    Integrate cfg.n_particles tracers from cfg.x0 and estimate D(t) at the sample times
    :raise ParticleIntegrationError: a particle failed; the original error is `cause`
    """
    assert isinstance(cfg, EnsembleConfig)
    logger.info("Ensemble %s", cfg)
    times = cfg.sample_times
    displacements = integrate_displacements(cfg)
    n_ou = cfg.n_ou if cfg.stepper.needs_driver else None
    est = estimate_from_displacements(times, displacements, n_ou=n_ou)
    logger.info("Result %s", est)
    return est


def cell_seed(master_seed, cell):
    """
    Seed of one sweep cell. The scheme is left out so that every scheme of a
    cell sees the same noise.
    """
    items = sorted((k, repr(v)) for k, v in cell.items() if k != 'scheme')
    digest = hashlib.blake2b(repr((int(master_seed), items)).encode('utf-8'), digest_size=8)
    return int.from_bytes(digest.digest(), 'little')


class SweepCell(object):
    """One grid point with its estimate, or the error that stopped it"""

    def __init__(self, coords, seed, estimate=None, error=None):
        self.coords = coords
        self.seed = seed
        self.estimate = estimate
        self.error = error

    @property
    def failed(self):
        return self.error is not None

    def rows(self, keys, final_only=False):
        """CSV rows led by the coordinates; a failed cell gives one FAILED row"""
        lead = [self.coords[key] for key in keys]
        if self.failed:
            yield lead + [FAILED, str(self.error)]
            return
        rows = list(self.estimate.rows())
        for row in rows[-1:] if final_only else rows:
            yield lead + row


class SweepTable(object):
    """Flat table of sweep cells; the grid keys lead every row"""

    def __init__(self, keys, cells):
        self.keys = list(keys)
        self.cells = list(cells)

    def __len__(self):
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    @property
    def columns(self):
        return tuple(self.keys) + CSV_COLUMNS

    def rows(self, final_only=False):
        for cell in self.cells:
            for row in cell.rows(self.keys, final_only):
                yield row

    def failures(self):
        return [cell for cell in self.cells if cell.failed]


def _grid_items(grid):
    if hasattr(grid, 'items'):
        return list(grid.items())
    return list(grid)


def sweep(base, grid, on_cell=None, derive=None):
    """
    Run one ensemble per point of the cartesian product of `grid`
    :param base: EnsembleConfig the cells are derived from
    :param grid: mapping or list of (key, values) over SWEEP_KEYS
    :param on_cell: optional callable(SweepCell) invoked after each cell
    :param derive: optional callable(coords) -> dict of extra overrides that
        follow from the coordinates (e.g. dt from sigma); not part of the seed
    :return: SweepTable; failed cells carry their error and the sweep continues
    """
    items = _grid_items(grid)
    for key, _ in items:
        if key not in SWEEP_KEYS:
            raise KeyError("Cannot sweep over '%s', expected one of %s" % (key, SWEEP_KEYS))
    keys = [key for key, _ in items]
    if not items:
        return SweepTable(keys, [])
    cells = []
    for coords in itertools.product(*[values for _, values in items]):
        cell = dict(zip(keys, coords))
        seed = cell_seed(base.seed, cell)
        changes = dict(cell)
        try:
            if derive is not None:
                changes.update(derive(cell))
            est = run_ensemble(base.with_overrides(seed=seed, **changes))
            result = SweepCell(cell, seed, estimate=est)
        except Exception as exc:
            logger.warning("Sweep cell %s failed: %s", cell, exc)
            result = SweepCell(cell, seed, error=exc)
        cells.append(result)
        if on_cell is not None:
            on_cell(result)
    return SweepTable(keys, cells)


class DiagnosticsReport(object):
    """Long time behaviour of a DiffusivityEstimate"""

    def __init__(self, plateau, drift, drift_stderr, trace, spread, histograms):
        self.plateau = plateau
        self.drift = drift
        self.drift_stderr = drift_stderr
        self.trace = trace
        self.spread = spread
        self.histograms = histograms

    def __str__(self):
        return "DiagnosticsReport(plateau D11=%.6g, drift D11=%.3g)" % (
            self.plateau[0, 0], self.drift[0])


class PathHistogram(object):
    """Distribution of the per OU path D11 at one sample time"""

    def __init__(self, time, values, counts, edges):
        self.time = time
        self.values = values
        self.counts = counts
        self.edges = edges

    @property
    def mean(self):
        return float(np.mean(self.values))

    @property
    def variance(self):
        return float(np.var(self.values, ddof=1))


def time_series_diagnostics(est, histogram_times=None, bins=20):
    """
    Plateau and drift over the last decade of sample times
    :param histogram_times: times at which per OU path histograms are taken
        (the nearest sample time is used); default the last sample time
    :return: DiagnosticsReport; drift entries are (D11, D22, D11 + D22)
        relative to the plateau
    :raise InsufficientHorizon: fewer than 10 times or less than 2 decades
    """
    times = est.times
    span = math.log10(times[-1] / times[0]) if times[0] > 0 else 0.0
    if len(times) < 10 or span < 2.0:
        raise InsufficientHorizon(span, len(times))
    horizon = times[-1]
    last_decade = times >= horizon / 10.0 * (1.0 - 1e-12)
    plateau = est.D[last_decade].mean(axis=0)
    start = int(np.argmax(last_decade))

    def series(D):
        return np.array([D[..., 0, 0], D[..., 1, 1], D[..., 0, 0] + D[..., 1, 1]])

    values = series(est.D)
    errors = np.array([est.stderr[:, 0, 0], est.stderr[:, 1, 1],
                       np.hypot(est.stderr[:, 0, 0], est.stderr[:, 1, 1])])
    level = np.abs(series(plateau))
    with np.errstate(divide='ignore', invalid='ignore'):
        drift = (values[:, -1] - values[:, start]) / level
        drift_stderr = np.hypot(errors[:, -1], errors[:, start]) / level

    histograms = []
    if est.per_path is not None:
        wanted = [horizon] if histogram_times is None else histogram_times
        for t in wanted:
            m = int(np.argmin(np.abs(times - t)))
            path_values = est.per_path[m, :, 0]
            counts, edges = np.histogram(path_values, bins=bins)
            histograms.append(PathHistogram(times[m], path_values, counts, edges))
    return DiagnosticsReport(plateau, drift, drift_stderr, est.trace, est.spread, histograms)
