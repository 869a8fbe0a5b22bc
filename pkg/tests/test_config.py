#!/usr/bin/env python
import math
import os
import tempfile
import unittest

from effdiff.config import KEYS
from effdiff.config import MissingRequiredError
from effdiff.config import REGISTRY
from effdiff.config import TypeMismatchError
from effdiff.config import UnknownKeyError
from effdiff.config import UnknownValueError
from effdiff.config import parse_config
from effdiff.config import read_config_file
from effdiff.config import resolve_key
from effdiff.flows import FlowFamily
from effdiff.sde_schemes import SchemeKind


class ConfigFileTest(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text):
        path = os.path.join(self.tmp.name, 'exp.cfg')
        with open(path, 'w') as handle:
            handle.write(text)
        return path

    def test_flat_and_sectioned_keys(self):
        # Arrange
        path = self.write("# cellular run\n"
                          "theta = 0.3  # inline\n"
                          "[scheme]\n"
                          "dt = 0.1\n")
        # Act
        raw = read_config_file(path)
        # Assert
        self.assertEqual(raw, {'theta': '0.3', 'dt': '0.1'})

    def test_precedence(self):
        # Arrange
        path = self.write("dt = 0.1\nn_particles = 300\nscheme = em\n")
        presets = {'dt': 0.01, 'n_particles': 100, 'T': 10}
        # Act
        cfg = parse_config(path, overrides={'scheme.dt': '0.2'}, presets=presets)
        # Assert
        self.assertEqual(cfg['dt'], 0.2)
        self.assertEqual(cfg['n_particles'], 300)
        self.assertEqual(cfg['T'], 10.0)
        self.assertEqual(cfg['scheme'], 'em')
        self.assertEqual(cfg['theta'], KEYS['theta'].default)

    def test_unknown_key(self):
        path = self.write("gamma = 1\n")
        with self.assertRaises(UnknownKeyError) as ctx:
            parse_config(path)
        self.assertEqual(ctx.exception.key, 'gamma')

    def test_wrong_section(self):
        path = self.write("[flow]\ndt = 0.1\n")
        with self.assertRaises(UnknownKeyError):
            parse_config(path)

    def test_empty_value(self):
        path = self.write("dt =\n")
        with self.assertRaises(MissingRequiredError) as ctx:
            parse_config(path)
        self.assertEqual(ctx.exception.key, 'dt')

    def test_unknown_scheme(self):
        path = self.write("scheme = milstein\n")
        with self.assertRaises(UnknownValueError) as ctx:
            parse_config(path)
        self.assertEqual(ctx.exception.value, 'milstein')
        self.assertIn('strang', ctx.exception.choices)

    def test_sigma_in_flow_or_scheme_section(self):
        for section in ('flow', 'scheme'):
            path = self.write("[%s]\nsigma = 0.2\n" % section)
            self.assertEqual(parse_config(path).sigma, 0.2)


class ParseConfigTest(unittest.TestCase):

    def test_defaults(self):
        cfg = parse_config()
        for key in REGISTRY:
            self.assertEqual(cfg[key.name], key.default)
        self.assertEqual(cfg.experiment, 'run')
        self.assertAlmostEqual(cfg.sigma, math.sqrt(2 * 0.01))

    def test_types(self):
        cfg = parse_config(overrides={'n_particles': ' 16 ', 'x0': '0.5, 1', 'sigma': 'auto',
                                      'family': 'OU-Cellular', 'alpha': '0.5'})
        self.assertEqual(cfg['n_particles'], 16)
        self.assertEqual(cfg['x0'], (0.5, 1.0))
        self.assertIsNone(cfg['sigma'])
        self.assertEqual(cfg['family'], 'ou-cellular')
        self.assertEqual(cfg['alpha'], 0.5)

    def test_type_mismatch(self):
        for name, value in (('dt', 'abc'), ('n_particles', 2.5), ('x0', '1,2,3'), ('T', 'nan')):
            with self.assertRaises(TypeMismatchError):
                parse_config(overrides={name: value})

    def test_range_checks(self):
        for name, value in (('dt', '-0.1'), ('modes', '48'), ('beta', '1.5'), ('n_particles', '1'),
                            ('fine_factor', '5'), ('sigma', '-1')):
            with self.assertRaises(TypeMismatchError) as ctx:
                parse_config(overrides={name: value})
            self.assertEqual(ctx.exception.key, name)

    def test_resolve_key(self):
        self.assertEqual(resolve_key('flow.theta').name, 'theta')
        self.assertEqual(resolve_key(' B ').name, 'B')
        self.assertEqual(resolve_key('scheme.sigma').name, 'sigma')
        with self.assertRaises(UnknownKeyError):
            resolve_key('scheme.theta')

    def test_convert(self):
        self.assertEqual(KEYS['scheme'].convert('EM'), 'em')
        self.assertEqual(KEYS['dt'].convert('0.25'), 0.25)
        self.assertIsNone(KEYS['alpha'].convert('auto'))
        with self.assertRaises(TypeMismatchError):
            KEYS['n_particles'].convert('0x10')
        with self.assertRaises(MissingRequiredError):
            KEYS['dt'].convert(None)
        with self.assertRaises(UnknownValueError):
            KEYS['scale'].convert('huge')

    def test_replace_validates(self):
        with self.assertRaises(TypeMismatchError):
            parse_config().replace(dt='0')
        with self.assertRaises(UnknownKeyError):
            parse_config().replace(gamma=1)

    def test_sigma_overrides_d0(self):
        cfg = parse_config(overrides={'sigma': '0.3', 'd0': '0.5'})
        self.assertEqual(cfg.sigma, 0.3)
        self.assertEqual(cfg.scheme().sigma.tolist(), [0.3, 0.3])

    def test_builders(self):
        # Arrange
        cfg = parse_config(overrides={'family': 'taylor-green', 'k': '3', 'scheme': 'strang',
                                      'dt': '0.02', 'theta_ou': '2', 'n_particles': '50',
                                      'T': '4', 'threads': '2'})
        # Act
        ens = cfg.ensemble()
        # Assert
        self.assertEqual(ens.flow.family, FlowFamily.TAYLOR_GREEN)
        self.assertEqual(ens.flow.get('k'), 3.0)
        self.assertEqual(ens.scheme.kind, SchemeKind.STRANG)
        self.assertEqual(ens.tau, 0.02)
        self.assertEqual(ens.ou.theta_ou, 2.0)
        self.assertEqual((ens.n_particles, ens.horizon, ens.threads), (50, 4.0, 2))

    def test_desk_scale(self):
        cfg = parse_config(overrides={'scale': 'desk', 'T': '500', 'n_particles': '1000'}).scaled()
        self.assertEqual(cfg['T'], 50.0)
        self.assertEqual(cfg['n_particles'], 100)
        full = parse_config(overrides={'T': '500'})
        self.assertIs(full.scaled(), full)

    def test_header(self):
        cfg = parse_config(experiment='table1')
        header = dict(cfg.header())
        self.assertEqual(header['experiment'], 'table1')
        self.assertEqual(header['sigma'], 'auto')
        self.assertEqual(header['seed'], '20200623')
        for key in REGISTRY:
            self.assertIn(key.name, header)

    def test_replace(self):
        cfg = parse_config().replace(scheme='em', dt='0.5')
        self.assertEqual(cfg['scheme'], 'em')
        self.assertEqual(cfg['dt'], 0.5)
