from ddu_ro import create_solver
from ddu_ro.blueprints.oracle.generators import tiny_facility
from ddu_ro.models import (DduSet, FirstStageSet, ProblemInstance, RecourseSpec, Scenario, add_recourse_column,
                           count_u_d, enumerate_u_d, enumerate_x, relaxation_bound_wR, scenario_membership,
                           tighten_u_d_box, validate)
from ddu_ro.schemas import instance_schema
from marshmallow import ValidationError
from dataclasses import replace
import numpy as np
import unittest


def single_point_instance():
    # X = {0}, U = {0}, Y = {y >= 1}, c2 = 1
    first_stage = FirstStageSet(0, 1, np.zeros((0, 1)), np.zeros(0), [[0, 0]])
    ddu = DduSet(1, 0, [[1.0]], np.zeros((1, 0)), np.zeros((0, 1, 0)), [[0.0]], [0.0], np.zeros((0, 2)))
    recourse = RecourseSpec(1, 0, [[0.0]], [[1.0]], np.zeros((1, 0)), [[0.0]], np.zeros((1, 0)), [1.0], [1.0],
                            np.zeros(0), np.zeros((0, 2)))
    return ProblemInstance(first_stage, ddu, recourse, [0.0], {'name': 'single-point'})


class TestModels(unittest.TestCase):
    def setUp(self):
        self.solver = create_solver('TestingConfig')
        self.config = self.solver.run_config()
        self.backend = self.config.backend()
        self.instance = tiny_facility(3, 'vertex')

    def test_validate_generated_instance(self):
        report = validate(self.instance)
        self.assertTrue(report.ok)
        self.assertEqual(report.violations, [])

    def test_validate_row_mismatch(self):
        ddu = replace(self.instance.ddu, F_c=self.instance.ddu.F_c[:-1])
        report = validate(replace(self.instance, ddu=ddu))
        self.assertFalse(report.ok)
        self.assertTrue(any(v.startswith('row mismatch: ddu') for v in report.violations))

    def test_validate_unbounded_uncertainty(self):
        instance = tiny_facility(0, 'integer')
        bounds = np.array(instance.ddu.u_d_bounds)
        bounds[0, 1] = np.inf
        report = validate(replace(instance, ddu=replace(instance.ddu, u_d_bounds=bounds)))
        self.assertTrue(any(v.startswith('A2: unbounded uncertainty') for v in report.violations))

    def test_validate_empty_objective(self):
        instance = single_point_instance()
        rec = replace(instance.recourse, c2c=np.zeros(1))
        report = validate(replace(instance, recourse=rec))
        self.assertTrue(any(v.startswith('empty objective') for v in report.violations))

    def test_serialization_keeps_matrices(self):
        instance = tiny_facility(5, 'mixed', 'mip')
        loaded = instance_schema.load(instance_schema.dump(instance))
        self.assertEqual(loaded.digest(), instance.digest())
        np.testing.assert_array_equal(loaded.ddu.F_d0, instance.ddu.F_d0)
        np.testing.assert_array_equal(loaded.recourse.B2d, instance.recourse.B2d)
        np.testing.assert_array_equal(loaded.ddu.pure_A, instance.ddu.pure_A)

    def test_ragged_matrix_rejected(self):
        payload = instance_schema.dump(self.instance)
        payload['recourse']['B2c'][1] = payload['recourse']['B2c'][1][:-1]
        with self.assertRaises(ValidationError) as ctx:
            instance_schema.load(payload)
        self.assertIn('recourse', ctx.exception.messages)

    def test_missing_field_rejected(self):
        payload = instance_schema.dump(self.instance)
        del payload['c1']
        with self.assertRaises(ValidationError) as ctx:
            instance_schema.load(payload)
        self.assertEqual(ctx.exception.messages['c1'], ['Missing data for required field.'])

    def test_scenario_membership(self):
        x = np.ones(self.instance.first_stage.size)
        zero = Scenario(np.zeros(self.instance.ddu.n_u), np.zeros(self.instance.ddu.m_u))
        self.assertTrue(scenario_membership(self.instance, x, zero))

        instance = single_point_instance()
        tol = 1e-6
        self.assertTrue(scenario_membership(instance, [0.0], Scenario([0.0], []), tol))
        self.assertFalse(scenario_membership(instance, [0.0], Scenario([2 * tol], []), tol))

    def test_enumerations(self):
        points = enumerate_x(self.instance)
        self.assertEqual(len(points), 2 ** self.instance.first_stage.m_x - 1)
        self.assertTrue(all(p.sum() >= 1 for p in points))
        u_d = enumerate_u_d(self.instance)
        self.assertEqual(len(u_d), 3)
        self.assertEqual(count_u_d(self.instance), 3)
        self.assertIsNone(count_u_d(self.instance, cap=2))

    def test_tighten_and_extend(self):
        instance = tiny_facility(1, 'integer')
        tight = tighten_u_d_box(instance, 0, 1)
        self.assertEqual(tight.ddu.u_d_bounds[0, 1], 1.0)
        self.assertLess(len(enumerate_u_d(tight)), len(enumerate_u_d(instance)))
        wider = add_recourse_column(instance, np.ones(instance.recourse.mu_y), 100.0)
        self.assertEqual(wider.recourse.n_y, instance.recourse.n_y + 1)
        self.assertTrue(validate(wider).ok)

    def test_wr_single_point(self):
        bound = relaxation_bound_wR(single_point_instance(), self.backend)
        self.assertEqual(bound.status, 'optimal')
        self.assertAlmostEqual(bound.value, 1.0, places=6)

    def test_wr_infeasible(self):
        instance = single_point_instance()
        rec = replace(instance.recourse, B2c=np.array([[1.0], [-1.0]]), B1=np.zeros((2, 1)), E_c=np.zeros((2, 1)),
                      B2d=np.zeros((2, 0)), E_d=np.zeros((2, 0)), d=np.array([1.0, 0.0]))
        bound = relaxation_bound_wR(replace(instance, recourse=rec), self.backend)
        self.assertEqual(bound.status, 'infeasible')

    def test_wr_with_decision_dependent_products(self):
        instance = tiny_facility(2, 'integer')
        bound = relaxation_bound_wR(instance, self.backend)
        self.assertEqual(bound.status, 'optimal')
        self.assertTrue(scenario_membership(instance, bound.x, bound.scenario))
