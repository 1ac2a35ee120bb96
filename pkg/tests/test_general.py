from ddu_ro import create_solver
from ddu_ro.blueprints.general.procedures import MixedCutRecord, rc_probe, solve_sp2_relaxed, solve_sp4
from ddu_ro.blueprints.nested.procedures import YdPiSet
from ddu_ro.blueprints.oracle.generators import tiny_facility
from ddu_ro.blueprints.oracle.procedures import verify_instance
from ddu_ro.reformulate import recourse_mip
from dataclasses import replace
import numpy as np
import unittest


class TestGeneral(unittest.TestCase):
    def setUp(self):
        self.solver = create_solver('TestingConfig')
        self.config = self.solver.run_config('extended')
        self.backend = self.config.backend()
        self.bigm = self.config.bigm()
        self.instance = tiny_facility(1, 'mixed', 'mip')
        self.x = np.ones(self.instance.first_stage.size)

    def test_extended_agrees_with_oracle(self):
        for seed in range(3):
            instance = tiny_facility(seed, 'mixed', 'mip')
            verdict = verify_instance(self.solver, instance, 'extended')
            self.assertTrue(verdict.agree, f"{instance.name}: {verdict.detail}")

    def test_extended_without_relatively_complete_recourse(self):
        instance = tiny_facility(4, 'mixed', 'mip', relatively_complete=False)
        verdict = verify_instance(self.solver, instance, 'extended')
        self.assertTrue(verdict.agree, verdict.detail)

    def test_extended_degenerates_to_nested(self):
        instance = tiny_facility(3, 'box', 'mip')
        nested = self.solver.run('nested', instance)
        extended = self.solver.run('extended', instance)
        self.assertEqual(extended.status, nested.status)
        self.assertAlmostEqual(extended.upper_bound, nested.upper_bound, places=4)

    def test_extended_degenerates_to_miu(self):
        instance = tiny_facility(3, 'integer')
        miu = self.solver.run('miu', instance)
        extended = self.solver.run('extended', instance)
        self.assertEqual(extended.status, 'optimal')
        self.assertAlmostEqual(extended.upper_bound, miu.upper_bound, places=4)

    def test_mixed_cut_identity(self):
        pi = np.array([1.0, 0.0])
        pairs = [(np.array([1.0]), pi)]
        a = MixedCutRecord(np.array([1.0, 0.0]), YdPiSet(pairs, 'iso', 1), 'iso', 1)
        b = MixedCutRecord(np.array([0.0, 1.0]), YdPiSet(pairs, 'iso', 2), 'iso', 2)
        self.assertTrue(a.same_as(a))
        self.assertFalse(a.same_as(b))
        self.assertFalse(a.is_feasibility)

    def test_approx_sandwich(self):
        for seed in range(3):
            instance = tiny_facility(seed, 'mixed', 'mip')
            verdict = verify_instance(self.solver, instance, 'approx')
            self.assertTrue(verdict.agree, f"{instance.name}: {verdict.detail}")
            self.assertIn(verdict.status, ('optimal', 'gap-stop', 'limit'))

    def test_approx_reports_rc_probe(self):
        report = self.solver.run('approx', self.instance)
        self.assertIsNotNone(report.rc_probe)
        self.assertLessEqual(report.rc_probe, self.config.tol_feas)
        self.assertIn('rc_probe', report.as_dict())

    def test_rc_probe_detects_missing_recourse(self):
        # no demand slack, no temporary capacity and no sites open
        instance = tiny_facility(1, 'mixed', 'mip', relatively_complete=False)
        rec = replace(instance.recourse, B2d=np.zeros_like(instance.recourse.B2d))
        instance = replace(instance, recourse=rec)
        probe = rc_probe(instance, np.zeros(instance.first_stage.size), self.backend, self.bigm)
        self.assertEqual(probe.status, 'optimal')
        self.assertGreater(probe.value, 0.5)

    def test_sp4_bounds_the_relaxation(self):
        relaxed = solve_sp2_relaxed(self.instance, self.x, self.backend, self.bigm)
        self.assertEqual(relaxed.status, 'optimal')
        exact = recourse_mip(self.instance, self.x, relaxed.scenario, self.backend)
        sp4 = solve_sp4(self.instance, self.x, exact.y_d, self.backend, self.bigm)
        self.assertEqual(sp4.status, 'optimal')
        self.assertLessEqual(relaxed.value, sp4.value + 1e-6)
        self.assertGreaterEqual(sp4.value, exact.value - 1e-6)
