#!/usr/bin/env python
"""
Command line front end

    effdiff run | sweep --grid key=v1,v2 | cell | bea | reproduce <id>

Every output is a CSV file under --out, prefixed by a '#' block holding the
full effective configuration.
"""

import argparse
import csv
import logging
import math
import os
import sys

import numpy as np

from effdiff import __version__
from effdiff.bea_oracle import MissingDerivative
from effdiff.bea_oracle import compare_against_modified
from effdiff.bea_oracle import modified_flow_for
from effdiff.bea_oracle import verify_divergence_free
from effdiff.cell_oracle import IncompatibleSource
from effdiff.cell_oracle import NoConvergence
from effdiff.cell_oracle import parseval_residual
from effdiff.cell_oracle import solve_cell
from effdiff.config import REGISTRY
from effdiff.config import ConfigError
from effdiff.config import parse_config
from effdiff.config import resolve_key
from effdiff.ensemble import CSV_COLUMNS
from effdiff.ensemble import FAILED
from effdiff.ensemble import EnsembleConfig
from effdiff.ensemble import InsufficientHorizon
from effdiff.ensemble import ParticleIntegrationError
from effdiff.ensemble import run_ensemble
from effdiff.ensemble import sample_grid
from effdiff.ensemble import step_rule
from effdiff.ensemble import sweep
from effdiff.ensemble import time_series_diagnostics
from effdiff.flows import FlowConfigError
from effdiff.flows import NotSeparableError
from effdiff.noise import NoiseStream
from effdiff.sde_schemes import ImplicitSolveDiverged
from effdiff.sde_schemes import NonCommensurateHorizon
from effdiff.sde_schemes import integrate_path


logger = logging.getLogger(__name__)


TABLE_THETAS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
TABLE_D0S = (1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1)

# D11 of the time periodic cellular flow, rows theta, columns TABLE_D0S
REFERENCE_CELLULAR = {
    0.1: (0.111547, 0.084047, 0.068833, 0.072755, 0.157947, 0.504085),
    0.2: (0.176780, 0.161091, 0.159181, 0.169005, 0.213418, 0.547745),
    0.3: (1.187858, 0.901204, 0.521761, 0.356920, 0.314840, 0.550539),
    0.4: (0.457187, 0.453117, 0.368187, 0.385328, 0.422116, 0.538405),
    0.5: (0.339372, 0.352455, 0.326034, 0.361473, 0.424855, 0.645214),
    0.6: (0.268441, 0.246738, 0.236696, 0.256992, 0.394480, 0.704883),
    0.7: (0.174016, 0.169134, 0.176643, 0.215472, 0.413941, 0.754199),
    0.8: (0.677995, 0.605287, 0.606582, 0.516210, 0.533211, 0.796788),
    0.9: (1.357033, 1.363832, 1.373394, 1.084116, 0.913423, 0.908773),
}

# D11 of the OU driven cellular flow, same layout
REFERENCE_OU = {
    0.1: (0.036442, 0.037821, 0.042649, 0.064412, 0.156084, 0.485647),
    0.2: (0.070701, 0.074095, 0.075525, 0.094416, 0.172281, 0.491868),
    0.3: (0.106238, 0.104986, 0.112149, 0.123868, 0.195421, 0.496326),
    0.4: (0.137335, 0.141704, 0.145786, 0.154876, 0.221186, 0.513384),
    0.5: (0.171326, 0.173708, 0.176357, 0.187868, 0.252861, 0.522133),
    0.6: (0.197188, 0.200511, 0.205098, 0.220810, 0.272689, 0.539465),
    0.7: (0.232775, 0.231468, 0.240672, 0.248353, 0.314599, 0.563992),
    0.8: (0.259921, 0.255478, 0.268048, 0.280238, 0.332105, 0.589805),
    0.9: (0.286707, 0.291560, 0.290207, 0.294778, 0.365502, 0.605338),
}

# Centre of the long time OU histogram
REFERENCE_OU_CENTRE = 0.156084

EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class UnknownExperiment(Exception):

    def __init__(self, name):
        super(UnknownExperiment, self).__init__(
            "Unknown experiment '%s', expected one of %s" % (name, sorted(TARGETS)))
        self.name = name


def reference_value(table, theta, d0):
    """Tabulated D11 for (theta, d0), or None off the table grid"""
    for t, row in table.items():
        if math.isclose(t, theta, rel_tol=1e-9):
            for d, value in zip(TABLE_D0S, row):
                if math.isclose(d, d0, rel_tol=1e-9):
                    return value
    return None


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ''
    return str(value)


class CsvReport(object):
    """
    CSV file with a '#' metadata block; every row is flushed as written.
    If the block exits with an error a FAILED marker row is written.
    """

    def __init__(self, path, cfg, columns, meta=None):
        self.path = path
        self.cfg = cfg
        self.columns = list(columns)
        self.meta = list(meta or [])
        self.handle = None
        self.writer = None

    def __enter__(self):
        directory = os.path.dirname(self.path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self.handle = open(self.path, 'w', newline='')
        self.handle.write("# effdiff %s\n" % __version__)
        for key, value in self.cfg.header() + self.meta:
            self.handle.write("# %s = %s\n" % (key, value))
        self.writer = csv.writer(self.handle)
        self.writer.writerow(self.columns)
        self.handle.flush()
        return self

    def row(self, values):
        self.writer.writerow([_cell(value) for value in values])
        self.handle.flush()

    def __exit__(self, exc_type, exc, tb):
        if exc is not None:
            self.writer.writerow([FAILED, exc_type.__name__, str(exc)])
        self.handle.close()
        logger.info("Wrote %s", self.path)
        return False


def output_path(cfg, name):
    return os.path.join(cfg['out'], name)


def run_command(cfg, args):
    est = run_ensemble(cfg.ensemble())
    with CsvReport(output_path(cfg, 'run.csv'), cfg, CSV_COLUMNS) as report:
        for row in est.rows():
            report.row(row)


def parse_grid(entries):
    """['dt=0.1,0.05', ...] -> [('dt', [0.1, 0.05]), ...] with registry types"""
    grid = []
    for entry in entries or []:
        name, sep, values = entry.partition('=')
        if not sep:
            raise ConfigError(entry, "Grid entry '%s' is not key=v1,v2,..." % entry)
        key = resolve_key(name)
        grid.append((key.name, [key.convert(value) for value in values.split(',')]))
    return grid


def _sweep_to_csv(cfg, base, grid, name, final_only=False, derive=None):
    keys = [key for key, _ in grid]
    with CsvReport(output_path(cfg, name), cfg, keys + list(CSV_COLUMNS)) as report:
        def on_cell(cell):
            for row in cell.rows(keys, final_only):
                report.row(row)
        return sweep(base, grid, on_cell=on_cell, derive=derive)


def sweep_command(cfg, args):
    grid = parse_grid(args.grid)
    table = _sweep_to_csv(cfg, cfg.ensemble(), grid, 'sweep.csv')
    if table.failures():
        logger.warning("%d of %d sweep cells failed", len(table.failures()), len(table))


def cell_command(cfg, args):
    flow = cfg.flow()
    columns = ('family', 'd0', 'modes', 'D11', 'D12', 'D22', 'residual', 'parseval')
    with CsvReport(output_path(cfg, 'cell.csv'), cfg, columns) as report:
        sol = solve_cell(flow, cfg['d0'], cfg['modes'], cfg['cell_tol'])
        D = sol.D_matrix
        report.row([flow.family.value, cfg['d0'], cfg['modes'], D[0, 0], D[0, 1], D[1, 1],
                    sol.residual, parseval_residual(sol)])


def bea_command(cfg, args):
    base = cfg.ensemble()
    mf = modified_flow_for(base.flow, base.scheme)
    divergence = verify_divergence_free(mf)
    logger.info("%s", divergence)
    comparison = compare_against_modified(base, cfg['fine_factor'])
    meta = [('variant', mf.variant.value), ('max_divergence', repr(divergence.max_abs)),
            ('long_time_gap', repr(comparison.long_time_gap))]
    with CsvReport(output_path(cfg, 'bea.csv'), cfg, comparison.columns, meta) as report:
        for row in comparison.rows():
            report.row(row)


def _table(cfg, name, reference):
    base = cfg.ensemble()
    grid = [('theta', TABLE_THETAS), ('d0', TABLE_D0S)]
    columns = ['theta', 'd0', 'D11', 'se11', 'n', 'reference', 'rel_err']
    with CsvReport(output_path(cfg, name + '.csv'), cfg, columns) as report:
        def on_cell(cell):
            theta, d0 = cell.coords['theta'], cell.coords['d0']
            expected = reference_value(reference, theta, d0)
            if cell.failed:
                report.row([theta, d0, FAILED, str(cell.error), '', expected, ''])
                return
            est = cell.estimate
            d11 = float(est.final[0, 0])
            report.row([theta, d0, d11, float(est.final_stderr[0, 0]), est.n_effective,
                        expected, abs(d11 - expected) / expected])
        table = sweep(base, grid, on_cell=on_cell)
    logger.info("%s: %d cells, %d failed", name, len(table), len(table.failures()))


def table1(cfg, args):
    _table(cfg, 'table1', REFERENCE_CELLULAR)


def table2(cfg, args):
    _table(cfg, 'table2', REFERENCE_OU)


FIG2_SIGMAS = tuple(10.0 ** e for e in (-1.0, -1.5, -2.0, -2.5, -3.0))
FIG_AMPLITUDES = (0.0, 2.72)
FIG_SCHEMES = ('lt', 'em')


def fig2(cfg, args):
    """D11 against sigma for B in {0, 2.72}, plus the log-log slope per (B, scheme)"""
    horizon = cfg['T']

    def derive(coords):
        return {'dt': step_rule(0.5 * coords['sigma'] ** 2, floor=cfg['dt'], horizon=horizon)}

    grid = [('B', FIG_AMPLITUDES), ('scheme', FIG_SCHEMES), ('sigma', FIG2_SIGMAS)]
    table = _sweep_to_csv(cfg, cfg.ensemble(), grid, 'fig2.csv', final_only=True, derive=derive)
    columns = ('B', 'scheme', 'slope', 'intercept', 'n_points')
    with CsvReport(output_path(cfg, 'fig2_slopes.csv'), cfg, columns) as report:
        for amplitude in FIG_AMPLITUDES:
            for scheme in FIG_SCHEMES:
                cells = [c for c in table if not c.failed and c.coords['B'] == amplitude and
                         c.coords['scheme'] == scheme and c.estimate.final[0, 0] > 0]
                if len(cells) < 2:
                    report.row([amplitude, scheme, FAILED, '', len(cells)])
                    continue
                log_sigma = np.log10([c.coords['sigma'] for c in cells])
                log_d11 = np.log10([c.estimate.final[0, 0] for c in cells])
                slope, intercept = np.polyfit(log_sigma, log_d11, 1)
                report.row([amplitude, scheme, float(slope), float(intercept), len(cells)])


def fig3(cfg, args):
    grid = [('B', FIG_AMPLITUDES), ('scheme', FIG_SCHEMES), ('dt', (0.1, 0.05, 0.025))]
    _sweep_to_csv(cfg, cfg.ensemble(), grid, 'fig3.csv', final_only=True)


def fig4(cfg, args):
    """D11(t) for two sigmas and two schemes, with last decade drift"""
    grid = [('sigma', (1e-5, 1e-6)), ('scheme', FIG_SCHEMES)]
    table = _sweep_to_csv(cfg, cfg.ensemble(), grid, 'fig4.csv')
    columns = ('sigma', 'scheme', 'D11_T', 'plateau_D11', 'drift_D11', 'drift_se')
    with CsvReport(output_path(cfg, 'fig4_summary.csv'), cfg, columns) as report:
        for cell in table:
            lead = [cell.coords['sigma'], cell.coords['scheme']]
            if cell.failed:
                report.row(lead + [FAILED])
                continue
            diag = time_series_diagnostics(cell.estimate)
            report.row(lead + [float(cell.estimate.final[0, 0]), float(diag.plateau[0, 0]),
                               float(diag.drift[0]), float(diag.drift_stderr[0])])


def fig5(cfg, args):
    """One trajectory per scheme driven by the same noise"""
    flow = cfg.flow()
    for scheme in FIG_SCHEMES:
        scheme_cfg = cfg.replace(scheme=scheme).scheme()
        path = output_path(cfg, 'fig5_%s.csv' % scheme)
        with CsvReport(path, cfg, ('t', 'x1', 'x2'), [('trajectory_scheme', scheme)]) as report:
            def observe(t, x):
                report.row([float(t), float(x[0]), float(x[1])])
            integrate_path(flow, scheme_cfg, cfg['x0'], cfg['T'], NoiseStream(cfg['seed']),
                           observer=observe)


FIG6_TIMES = (100.0, 200.0, 500.0, 5000.0, 20000.0)


def fig6(cfg, args):
    """Histograms of the per OU path D11 at growing times"""
    factor = 10.0 if cfg['scale'] == 'desk' else 1.0
    wanted = [t / factor for t in FIG6_TIMES if t / factor <= cfg['T']]
    base = cfg.ensemble()
    times = np.union1d(sample_grid(base.horizon, base.tau, base.spacing, base.per_decade),
                       wanted)
    est = run_ensemble(EnsembleConfig(flow=base.flow, scheme=base.scheme, ou=base.ou,
                                      n_particles=base.n_particles, x0=base.x0,
                                      horizon=base.horizon, sample_times=times,
                                      n_ou=base.n_ou, seed=base.seed, threads=base.threads))
    diag = time_series_diagnostics(est, histogram_times=wanted)
    columns = ('t', 'bin_lo', 'bin_hi', 'count')
    with CsvReport(output_path(cfg, 'fig6.csv'), cfg, columns) as report:
        for hist in diag.histograms:
            for count, lo, hi in zip(hist.counts, hist.edges[:-1], hist.edges[1:]):
                report.row([float(hist.time), float(lo), float(hi), int(count)])
    columns = ('t', 'mean_D11', 'variance_D11', 'n_paths', 'reference_centre')
    with CsvReport(output_path(cfg, 'fig6_summary.csv'), cfg, columns) as report:
        for hist in diag.histograms:
            report.row([float(hist.time), hist.mean, hist.variance, len(hist.values),
                        REFERENCE_OU_CENTRE])


def fig8(cfg, args):
    """Both schemes against their modified flows"""
    comparisons = []
    for scheme in FIG_SCHEMES:
        base = cfg.replace(scheme=scheme).ensemble()
        comparisons.append((scheme, compare_against_modified(base, cfg['fine_factor'])))
    columns = ('scheme',) + comparisons[0][1].columns
    meta = [('long_time_gap_%s' % scheme, repr(c.long_time_gap)) for scheme, c in comparisons]
    with CsvReport(output_path(cfg, 'fig8.csv'), cfg, columns, meta) as report:
        for scheme, comparison in comparisons:
            for row in comparison.rows():
                report.row([scheme] + row)


def cell_target(cfg, args):
    """Eulerian against Lagrangian D11 on Taylor-Green cells"""
    flow = cfg.flow()
    sol = solve_cell(flow, cfg['d0'], cfg['modes'], cfg['cell_tol'])
    doubled = solve_cell(flow, cfg['d0'], 2 * cfg['modes'], cfg['cell_tol'])
    est = run_ensemble(cfg.ensemble())
    eulerian = float(sol.D_matrix[0, 0])
    lagrangian = float(est.final[0, 0])
    columns = ('d0', 'modes', 'D11_eulerian', 'D11_eulerian_doubled', 'D11_lagrangian',
               'se11_lagrangian', 'rel_gap', 'residual')
    with CsvReport(output_path(cfg, 'cell.csv'), cfg, columns) as report:
        report.row([cfg['d0'], cfg['modes'], eulerian, float(doubled.D_matrix[0, 0]), lagrangian,
                    float(est.final_stderr[0, 0]), abs(lagrangian - eulerian) / eulerian,
                    sol.residual])


_CELLULAR = {'family': 'chaotic-cellular', 'dt': 0.05, 'T': 5000, 'n_particles': 5000,
             'scheme': 'lt'}

# Reproduction targets: (settings applied under the file and the command line, runner)
TARGETS = {
    'table1': (dict(_CELLULAR), table1),
    'table2': (dict(_CELLULAR, family='ou-cellular', n_ou=40), table2),
    'fig2': ({'family': 'oscillating-vortex', 'k': 2.0 * math.pi, 'omega': math.pi,
              'dt': 0.01, 'T': 10000, 'n_particles': 5000, 'implicit_iters': 20}, fig2),
    'fig3': ({'family': 'oscillating-vortex', 'k': 2.0 * math.pi, 'omega': math.pi,
              'sigma': 0.01, 'T': 10000, 'n_particles': 5000, 'implicit_iters': 60}, fig3),
    'fig4': (dict(_CELLULAR, T=500000), fig4),
    'fig5': ({'family': 'chaotic-cellular', 'theta': 0.1, 'd0': 1e-5, 'dt': 0.01,
              'T': 1000}, fig5),
    'fig6': (dict(_CELLULAR, family='ou-cellular', d0=0.01, n_ou=2000, n_particles=100000,
                  T=20000), fig6),
    'fig8': (dict(_CELLULAR, d0=1e-5, fine_factor=25), fig8),
    'cell': ({'family': 'taylor-green', 'd0': 0.1, 'dt': 0.01, 'T': 1000,
              'n_particles': 5000, 'modes': 64}, cell_target),
}

COMMANDS = {
    'run': (None, run_command),
    'sweep': (None, sweep_command),
    'cell': ({'family': 'taylor-green', 'd0': 0.1}, cell_command),
    'bea': ({'d0': 1e-5}, bea_command),
}


def _add_key_flags(parser):
    for key in REGISTRY:
        flags = ['--%s' % key.name]
        if key.name == 'family':
            flags.append('--flow')
        parser.add_argument(*flags, dest='key_%s' % key.name, default=argparse.SUPPRESS,
                            metavar=key.name.upper(), help=key.help)
    parser.add_argument('--config', default=argparse.SUPPRESS,
                        help='flat key = value configuration file')
    parser.add_argument('--set', dest='assignments', action='append', default=argparse.SUPPRESS,
                        metavar='KEY=VALUE', help='set any key, may be repeated')
    parser.add_argument('--log-level', dest='log_level', default=argparse.SUPPRESS,
                        choices=('DEBUG', 'INFO', 'WARNING', 'ERROR'))


def build_parser():
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    _add_key_flags(common)
    parser = argparse.ArgumentParser(prog='effdiff', parents=[common], allow_abbrev=False,
                                     description="Effective diffusivity of passive tracers")
    subparsers = parser.add_subparsers(dest='command')
    subparsers.required = True
    subparsers.add_parser('run', parents=[common], allow_abbrev=False,
                          help='one ensemble, D(t) time series')
    sweep_parser = subparsers.add_parser('sweep', parents=[common], allow_abbrev=False,
                                         help='ensembles over a parameter grid')
    sweep_parser.add_argument('--grid', action='append', metavar='KEY=V1,V2,...',
                              help='grid axis, may be repeated')
    subparsers.add_parser('cell', parents=[common], allow_abbrev=False,
                          help='spectral cell problem for a steady flow')
    subparsers.add_parser('bea', parents=[common], allow_abbrev=False,
                          help='scheme against its modified equation')
    reproduce = subparsers.add_parser('reproduce', parents=[common], allow_abbrev=False,
                                      help='regenerate a table or figure data set')
    reproduce.add_argument('target', help=', '.join(sorted(TARGETS)))
    return parser


def collect_overrides(args):
    """Command line values keyed by config key"""
    overrides = {}
    for name, value in vars(args).items():
        if name.startswith('key_'):
            overrides[name[len('key_'):]] = value
    for assignment in getattr(args, 'assignments', None) or []:
        name, sep, value = assignment.partition('=')
        if not sep:
            raise ConfigError(assignment, "--set expects KEY=VALUE, got '%s'" % assignment)
        overrides[resolve_key(name).name] = value
    return overrides


def _run(experiment, presets, runner, config_path, overrides, args=None):
    cfg = parse_config(config_path, overrides, experiment=experiment, presets=presets).scaled()
    logger.info("Running %s (scale %s, seed %d, threads %d)", experiment, cfg['scale'],
                cfg['seed'], cfg['threads'])
    runner(cfg, args)
    return cfg


def reproduce(target, config_path=None, overrides=None):
    """
    Regenerate the data set of a table or figure under cfg['out']
    :param target: one of TARGETS
    :return: the effective ExperimentConfig
    :raise UnknownExperiment: target is not in TARGETS
    """
    if target not in TARGETS:
        raise UnknownExperiment(target)
    presets, runner = TARGETS[target]
    return _run(target, presets, runner, config_path, overrides or {})


def _dispatch(args):
    config_path = getattr(args, 'config', None)
    overrides = collect_overrides(args)
    if args.command == 'reproduce':
        reproduce(args.target, config_path, overrides)
        return
    presets, runner = COMMANDS[args.command]
    _run(args.command, presets, runner, config_path, overrides, args)


CONFIG_ERRORS = (ConfigError, UnknownExperiment, FlowConfigError)
RUNTIME_ERRORS = (ParticleIntegrationError, ImplicitSolveDiverged, NonCommensurateHorizon,
                  InsufficientHorizon, NoConvergence, IncompatibleSource, MissingDerivative,
                  NotSeparableError, AssertionError, ValueError, KeyError, OSError)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, getattr(args, 'log_level', 'INFO')),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        _dispatch(args)
    except CONFIG_ERRORS as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except RUNTIME_ERRORS as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME
    return 0


if __name__ == '__main__':
    sys.exit(main())
