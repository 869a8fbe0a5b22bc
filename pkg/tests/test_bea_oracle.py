#!/usr/bin/env python
import math
import unittest

import numpy as np
import pytest

from effdiff.bea_oracle import MissingDerivative
from effdiff.bea_oracle import ModifiedFlowStepper
from effdiff.bea_oracle import ModifiedHamiltonian
from effdiff.bea_oracle import Variant
from effdiff.bea_oracle import build_modified_flow
from effdiff.bea_oracle import compare_against_modified
from effdiff.bea_oracle import hamiltonian_drift
from effdiff.bea_oracle import modified_flow_for
from effdiff.bea_oracle import variant_for
from effdiff.bea_oracle import verify_divergence_free
from effdiff.ensemble import EnsembleConfig
from effdiff.flows import FlowSpec
from effdiff.flows import NotSeparableError
from effdiff.flows import SeparableForm
from effdiff.noise import NoiseStream
from effdiff.sde_schemes import SchemeConfig
from effdiff.sde_schemes import SchemeKind
from effdiff.sde_schemes import StepState


class PartialForm(SeparableForm):
    """Provides f and g but none of their derivatives"""

    provides = ('F', 'G', 'f', 'g')

    def f(self, t, p, driver=None):
        return np.cos(p)

    def g(self, t, q, driver=None):
        return np.cos(q)


class UnsteadyForm(PartialForm):
    """Time dependent, space derivatives only"""

    provides = SeparableForm.provides
    time_dependent = True

    def df(self, t, p, driver=None):
        return -np.sin(p)

    def dg(self, t, q, driver=None):
        return -np.sin(q)

    def d2f(self, t, p, driver=None):
        return -np.cos(p)

    def d2g(self, t, q, driver=None):
        return -np.cos(q)


def separable_forms():
    return [FlowSpec.create('taylor-green').separable_form(),
            FlowSpec.create('chaotic-cellular', theta=0.3).separable_form(),
            FlowSpec.create('time-dependent-taylor-green', B=0.5).separable_form(),
            FlowSpec.create('ou-cellular', theta=0.3).separable_form()]


class DivergenceTest(unittest.TestCase):

    def test_split_is_divergence_free(self):
        for form in separable_forms():
            for beta in (0.5, 0.0):
                # Arrange
                mf = build_modified_flow(form, 0.05, 0.3, Variant.SYMPLECTIC_SPLIT, beta=beta)
                # Act
                report = verify_divergence_free(mf, n_samples=2000)
                # Assert
                self.assertTrue(report.passed(1e-6), str(report))

    def test_euler_maruyama_is_not(self):
        form = FlowSpec.create('chaotic-cellular', theta=0.3).separable_form()
        mf = build_modified_flow(form, 0.05, 0.3, 'em')
        report = verify_divergence_free(mf, n_samples=2000)
        self.assertFalse(report.passed(1e-6))
        self.assertGreater(report.max_abs, 1e-3)


class DriftTest(unittest.TestCase):

    def test_zero_step_limit(self):
        t = np.linspace(0.0, 3.0, 50)
        y = np.stack([np.linspace(-1.0, 2.0, 50), np.linspace(0.5, 4.0, 50)], axis=-1)
        for form in separable_forms()[:3]:
            mf = build_modified_flow(form, 0.0, 0.4, 'split', beta=0.0)
            np.testing.assert_allclose(mf.drift(t, y), form.separable_velocity(t, y),
                                       rtol=0, atol=1e-15)
            np.testing.assert_allclose(mf.diffusion_matrix(t, y), np.broadcast_to(0.4 * np.eye(2), (50, 2, 2)),
                                       rtol=0, atol=1e-15)

    def test_variants_differ_by_transport_term(self):
        # Arrange
        form = FlowSpec.create('taylor-green').separable_form()
        y = np.array([[0.3, 1.2], [2.0, -0.4], [5.0, 3.3]])
        dt = 0.02
        # Act
        split = build_modified_flow(form, dt, 0.3, 'split', beta=0.5).drift(0.0, y)
        em = build_modified_flow(form, dt, 0.3, 'em', beta=0.5).drift(0.0, y)
        # Assert
        expected = -dt * form.df(0.0, y[:, 0]) * form.g(0.0, y[:, 1])
        np.testing.assert_allclose(split[:, 0], em[:, 0], rtol=0, atol=1e-14)
        np.testing.assert_allclose(split[:, 1] - em[:, 1], expected, rtol=0, atol=1e-13)

    def test_split_drift_is_symplectic_gradient(self):
        # Arrange
        form = FlowSpec.create('taylor-green', k=1.0).separable_form()
        dt, sigma, h = 0.05, 0.3, 1e-5
        mf = build_modified_flow(form, dt, sigma, 'split')
        H = ModifiedHamiltonian(form, dt, sigma)
        y = np.random.default_rng(3).uniform(0.0, 2 * math.pi, (200, 2))
        dp, dq = np.array([h, 0.0]), np.array([0.0, h])
        # Act
        H_p = (H(0.0, y + dp) - H(0.0, y - dp)) / (2 * h)
        H_q = (H(0.0, y + dq) - H(0.0, y - dq)) / (2 * h)
        drift = mf.drift(0.0, y)
        # Assert
        np.testing.assert_allclose(drift[:, 0], -H_q, rtol=0, atol=1e-8)
        np.testing.assert_allclose(drift[:, 1], H_p, rtol=0, atol=1e-8)

    def test_time_terms(self):
        form = FlowSpec.create('chaotic-cellular', theta=0.3).separable_form()
        y = np.array([0.4, 1.1])
        centred = build_modified_flow(form, 0.1, 0.2, 'split', beta=0.5)
        lagged = build_modified_flow(form, 0.1, 0.2, 'split', beta=0.0)
        self.assertFalse(centred.time_terms)
        self.assertTrue(lagged.time_terms)
        gap = lagged.drift(1.0, y) - centred.drift(1.0, y)
        expected = [0.05 * form.g_t(1.0, 1.1), -0.05 * form.f_t(1.0, 0.4)]
        np.testing.assert_allclose(gap, expected, rtol=0, atol=1e-15)

    def test_driven_form_has_no_time_terms(self):
        form = FlowSpec.create('ou-cellular', theta=0.3).separable_form()
        mf = build_modified_flow(form, 0.1, 0.2, 'split', beta=0.0)
        self.assertFalse(mf.time_terms)


class DiffusionTest(unittest.TestCase):

    def test_identity(self):
        y = np.random.default_rng(8).uniform(0.0, 2 * math.pi, (500, 2))
        for form in separable_forms()[:3]:
            for dt in (0.0, 0.01, 0.2):
                mf = build_modified_flow(form, dt, 0.3, 'split')
                self.assertLess(mf.diffusion_identity_residual(0.7, y), 1e-12)

    def test_correction_matrix(self):
        form = FlowSpec.create('chaotic-cellular', theta=0.0).separable_form()
        mf = build_modified_flow(form, 0.1, 1.0, 'split')
        d1 = mf.correction_matrix(0.0, [0.5, 0.7])
        np.testing.assert_allclose(d1, [[0.0, 0.5 * math.sin(0.7)],
                                        [0.5 * math.sin(0.5), 0.0]])


class BuildTest(unittest.TestCase):

    def test_missing_space_derivative(self):
        with self.assertRaises(MissingDerivative) as ctx:
            build_modified_flow(PartialForm(), 0.1, 0.1, 'split')
        self.assertEqual(ctx.exception.name, 'df')

    def test_missing_time_derivative(self):
        build_modified_flow(UnsteadyForm(), 0.1, 0.1, 'split', beta=0.5)
        with self.assertRaises(MissingDerivative) as ctx:
            build_modified_flow(UnsteadyForm(), 0.1, 0.1, 'split', beta=0.0)
        self.assertEqual(ctx.exception.name, 'f_t')

    def test_variant_for(self):
        self.assertEqual(variant_for(SchemeKind.LIE_TROTTER), Variant.SYMPLECTIC_SPLIT)
        self.assertEqual(variant_for(SchemeKind.EULER_MARUYAMA), Variant.EULER_MARUYAMA)
        with self.assertRaises(ValueError):
            variant_for(SchemeKind.STRANG)

    def test_rotated_noise(self):
        flow = FlowSpec.create('taylor-green', k=2.0)
        mf = modified_flow_for(flow, SchemeConfig(kind='em', tau=0.05, sigma=0.1))
        self.assertAlmostEqual(mf.sigma, math.sqrt(2.0) * 2.0 * 0.1)
        self.assertEqual(mf.variant, Variant.EULER_MARUYAMA)
        self.assertEqual(mf.beta, 0.0)

    def test_not_separable(self):
        with self.assertRaises(NotSeparableError):
            modified_flow_for(FlowSpec.create('oscillating-vortex', B=1.0), SchemeConfig())


class StepperTest(unittest.TestCase):

    def test_zero_step_flow_matches_euler_maruyama(self):
        # Arrange
        flow = FlowSpec.create('taylor-green', k=1.0)
        form = flow.separable_form()
        mf = build_modified_flow(form, 0.0, 0.0, 'em')
        stepper = ModifiedFlowStepper(mf, 0.01)
        x = np.array([[0.3, 0.4], [1.0, -2.0]])
        # Act
        result = stepper.step(StepState(0.0, x), NoiseStream(4, count=2))
        # Assert
        np.testing.assert_allclose(result.x, x + 0.01 * flow.velocity(0.0, x), rtol=0, atol=1e-14)
        self.assertEqual(result.t, 0.01)

    def test_comparison_layout(self):
        base = EnsembleConfig(flow=FlowSpec.create('chaotic-cellular', theta=0.1),
                              scheme=SchemeConfig(tau=0.1, sigma=0.2),
                              n_particles=20, horizon=1.0)
        comparison = compare_against_modified(base, fine_factor=10)
        rows = list(comparison.rows())
        self.assertEqual(len(rows), len(comparison.times))
        self.assertEqual(len(rows[0]), len(comparison.columns))
        np.testing.assert_array_equal(comparison.fine.times, comparison.coarse.times)
        self.assertAlmostEqual(comparison.tau_fine, 0.01)

    def test_fine_factor_bound(self):
        with self.assertRaises(AssertionError):
            compare_against_modified(EnsembleConfig(n_particles=2, horizon=1.0), fine_factor=5)

    @pytest.mark.slow
    def test_modified_flow_tracks_scheme(self):
        # Arrange
        base = EnsembleConfig(flow=FlowSpec.create('chaotic-cellular', theta=0.1),
                              scheme=SchemeConfig(tau=0.1, sigma=math.sqrt(2 * 0.05)),
                              n_particles=4000, horizon=100.0, seed=17)
        # Act
        comparison = compare_against_modified(base, fine_factor=10)
        # Assert
        self.assertLess(comparison.long_time_gap, 0.1)

    @pytest.mark.slow
    def test_each_scheme_tracks_its_own_modified_flow(self):
        # Arrange
        base = EnsembleConfig(flow=FlowSpec.create('chaotic-cellular', theta=0.1),
                              scheme=SchemeConfig(tau=0.05, sigma=math.sqrt(2 * 1e-5)),
                              n_particles=600, horizon=500.0, threads=4)
        # Act
        split = compare_against_modified(base, fine_factor=25)
        euler = compare_against_modified(
            base.with_overrides(scheme='em'), fine_factor=25)
        # Assert
        self.assertLess(split.long_time_gap, 0.1)
        self.assertLess(euler.long_time_gap, 0.1)
        split_rows, euler_rows = list(split.rows()), list(euler.rows())
        spread_gap = abs(euler_rows[-1][3] - split_rows[-1][3])
        self.assertGreater(spread_gap, 3 * math.hypot(euler_rows[-1][4], split_rows[-1][4]))


class HamiltonianDriftTest(unittest.TestCase):

    def test_modified_hamiltonian_is_better_conserved(self):
        # Arrange
        flow = FlowSpec.create('taylor-green', k=1.0)
        cfg = SchemeConfig(tau=0.05)
        # Act
        drift = hamiltonian_drift(flow, cfg, [0.3, 0.1], 20.0)
        # Assert
        self.assertGreater(drift.hamiltonian, 0.0)
        self.assertLess(drift.modified, 0.3 * drift.hamiltonian)

    def test_drift_orders_under_step_halving(self):
        # Arrange
        flow = FlowSpec.create('taylor-green', k=1.0)
        taus = (0.04, 0.02, 0.01)
        # Act
        drifts = [hamiltonian_drift(flow, SchemeConfig(tau=tau), [0.3, 0.1], 100.0)
                  for tau in taus]
        # Assert
        for coarse, fine in zip(drifts, drifts[1:]):
            self.assertTrue(1.7 <= coarse.hamiltonian / fine.hamiltonian <= 2.3,
                            (coarse, fine))
            self.assertTrue(3.2 <= coarse.modified / fine.modified <= 4.8, (coarse, fine))

    def test_needs_steady_flow(self):
        with self.assertRaises(AssertionError):
            hamiltonian_drift(FlowSpec.create('chaotic-cellular', theta=0.2),
                              SchemeConfig(tau=0.05), [0.0, 0.0], 1.0)
