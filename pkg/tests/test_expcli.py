#!/usr/bin/env python
import csv
import os
import tempfile
import unittest

from effdiff.config import ConfigError
from effdiff.config import parse_config
from effdiff.ensemble import CSV_COLUMNS
from effdiff.expcli import EXIT_CONFIG
from effdiff.expcli import EXIT_RUNTIME
from effdiff.expcli import FAILED
from effdiff.expcli import REFERENCE_CELLULAR
from effdiff.expcli import REFERENCE_OU
from effdiff.expcli import UnknownExperiment
from effdiff.expcli import CsvReport
from effdiff.expcli import build_parser
from effdiff.expcli import collect_overrides
from effdiff.expcli import main
from effdiff.expcli import parse_grid
from effdiff.expcli import reference_value
from effdiff.expcli import reproduce


SMALL_RUN = ['--n_particles', '10', '--T', '1', '--dt', '0.1']


def read_report(path):
    """(metadata dict, header row, data rows) of a CSV report"""
    meta = {}
    with open(path) as handle:
        lines = handle.read().splitlines()
    body = []
    for line in lines:
        if line.startswith('# ') and ' = ' in line:
            key, _, value = line[2:].partition(' = ')
            meta[key] = value
        elif not line.startswith('#'):
            body.append(line)
    rows = list(csv.reader(body))
    return meta, rows[0], rows[1:]


class ParserTest(unittest.TestCase):

    def test_overrides(self):
        args = build_parser().parse_args(['run', '--theta', '0.3', '--flow', 'taylor-green',
                                          '--set', 'scheme.dt=0.2'])
        self.assertEqual(collect_overrides(args),
                         {'theta': '0.3', 'family': 'taylor-green', 'dt': '0.2'})

    def test_bad_set(self):
        args = build_parser().parse_args(['run', '--set', 'dt'])
        with self.assertRaises(ConfigError):
            collect_overrides(args)

    def test_parse_grid(self):
        grid = parse_grid(['dt=0.1,0.05', 'scheme=lt,em'])
        self.assertEqual(grid, [('dt', [0.1, 0.05]), ('scheme', ['lt', 'em'])])
        with self.assertRaises(ConfigError):
            parse_grid(['dt'])

    def test_reference_value(self):
        self.assertEqual(reference_value(REFERENCE_CELLULAR, 0.1, 1e-2), 0.157947)
        self.assertEqual(reference_value(REFERENCE_OU, 0.9, 1e-6), 0.286707)
        self.assertIsNone(reference_value(REFERENCE_OU, 0.15, 1e-6))


class CsvReportTest(unittest.TestCase):

    def test_failed_marker(self):
        with tempfile.TemporaryDirectory() as tmp:
            # Arrange
            path = os.path.join(tmp, 'sub', 'out.csv')
            cfg = parse_config()
            # Act
            with self.assertRaises(RuntimeError):
                with CsvReport(path, cfg, ('a', 'b')) as report:
                    report.row([1.5, 2])
                    raise RuntimeError("boom")
            # Assert
            meta, header, rows = read_report(path)
            self.assertEqual(header, ['a', 'b'])
            self.assertEqual(rows[0], ['1.5', '2'])
            self.assertEqual(rows[1], [FAILED, 'RuntimeError', 'boom'])
            self.assertEqual(meta['scheme'], 'lt')


class MainTest(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = ['--out', self.tmp.name]

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def test_run(self):
        # Act
        code = main(['run'] + SMALL_RUN + self.out + ['--log-level', 'WARNING'])
        # Assert
        self.assertEqual(code, 0)
        meta, header, rows = read_report(self.path('run.csv'))
        self.assertEqual(tuple(header), CSV_COLUMNS)
        self.assertEqual(meta['experiment'], 'run')
        self.assertEqual(meta['n_particles'], '10')
        self.assertEqual(meta['seed'], '20200623')
        self.assertAlmostEqual(float(rows[-1][0]), 1.0)
        self.assertEqual(rows[-1][-1], '10')

    def test_same_seed_same_output(self):
        main(['run'] + SMALL_RUN + ['--out', self.path('a')])
        main(['run'] + SMALL_RUN + ['--out', self.path('b')])
        meta_a, _, rows_a = read_report(self.path('a/run.csv'))
        meta_b, _, rows_b = read_report(self.path('b/run.csv'))
        self.assertEqual(rows_a, rows_b)
        self.assertEqual(meta_a['seed'], meta_b['seed'])

    def test_config_file(self):
        with open(self.path('exp.cfg'), 'w') as handle:
            handle.write("theta = 0.4\nn_particles = 12\n")
        code = main(['run', '--config', self.path('exp.cfg'), '--n_particles', '10',
                     '--T', '1', '--dt', '0.1'] + self.out)
        self.assertEqual(code, 0)
        meta, _, rows = read_report(self.path('run.csv'))
        self.assertEqual(meta['theta'], '0.4')
        self.assertEqual(rows[-1][-1], '10')

    def test_config_errors(self):
        self.assertEqual(main(['run', '--scheme', 'milstein'] + self.out), EXIT_CONFIG)
        self.assertEqual(main(['run', '--set', 'gamma=1'] + self.out), EXIT_CONFIG)
        self.assertEqual(main(['run', '--dt', ''] + self.out), EXIT_CONFIG)
        self.assertEqual(main(['reproduce', 'fig99'] + self.out), EXIT_CONFIG)
        self.assertFalse(os.path.exists(self.path('run.csv')))

    def test_runtime_error(self):
        code = main(['run', '--n_particles', '10', '--T', '1.05', '--dt', '0.1'] + self.out)
        self.assertEqual(code, EXIT_RUNTIME)

    def test_sweep(self):
        # Act
        code = main(['sweep', '--grid', 'd0=0.01,0.02', '--grid', 'dt=0.1,0.3'] +
                    SMALL_RUN + self.out)
        # Assert
        self.assertEqual(code, 0)
        _, header, rows = read_report(self.path('sweep.csv'))
        self.assertEqual(header[:2], ['d0', 'dt'])
        failed = [row for row in rows if row[2] == FAILED]
        self.assertEqual(len(failed), 2)
        self.assertTrue(all(row[1] == '0.3' for row in failed))

    def test_cell(self):
        code = main(['cell', '--modes', '16'] + self.out)
        self.assertEqual(code, 0)
        meta, header, rows = read_report(self.path('cell.csv'))
        self.assertEqual(meta['family'], 'taylor-green')
        self.assertEqual(rows[0][0], 'taylor-green')
        d11 = float(rows[0][header.index('D11')])
        self.assertGreater(d11, 0.1)

    def test_cell_needs_steady_flow(self):
        code = main(['cell', '--family', 'oscillating-vortex', '--B', '1', '--modes', '16'] + self.out)
        self.assertEqual(code, EXIT_RUNTIME)

    def test_bea(self):
        code = main(['bea', '--fine_factor', '10'] + SMALL_RUN + self.out)
        self.assertEqual(code, 0)
        meta, header, rows = read_report(self.path('bea.csv'))
        self.assertEqual(meta['variant'], 'split')
        self.assertEqual(meta['d0'], '1e-05')
        self.assertLess(float(meta['max_divergence']), 1e-6)
        self.assertEqual(header[0], 't')

    def test_bea_strang(self):
        code = main(['bea', '--scheme', 'strang'] + SMALL_RUN + self.out)
        self.assertEqual(code, EXIT_RUNTIME)

    def test_reproduce_fig5(self):
        code = main(['reproduce', 'fig5', '--T', '1', '--scale', 'desk'] + self.out)
        self.assertEqual(code, 0)
        lt_meta, _, lt_rows = read_report(self.path('fig5_lt.csv'))
        _, _, em_rows = read_report(self.path('fig5_em.csv'))
        self.assertEqual(lt_meta['experiment'], 'fig5')
        self.assertEqual(lt_meta['trajectory_scheme'], 'lt')
        self.assertEqual(len(lt_rows), len(em_rows))
        self.assertEqual(lt_rows[0], em_rows[0])
        self.assertNotEqual(lt_rows[-1], em_rows[-1])

    def test_reproduce_function(self):
        cfg = reproduce('fig5', overrides={'T': '1', 'scale': 'desk', 'out': self.tmp.name})
        self.assertEqual(cfg.experiment, 'fig5')
        self.assertTrue(os.path.exists(self.path('fig5_lt.csv')))
        with self.assertRaises(UnknownExperiment):
            reproduce('fig7')
