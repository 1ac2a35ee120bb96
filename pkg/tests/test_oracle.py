from ddu_ro import create_solver
from ddu_ro.blueprints.oracle.generators import pin_upper_corner, tiny_facility
from ddu_ro.blueprints.oracle.procedures import (SUITES, classify, evaluate_x, run_suite, slice_vertices,
                                                 solve_by_enumeration, suite_instances)
from ddu_ro.errors import BudgetExceeded, InstanceError
from ddu_ro.models import DduSet, FirstStageSet, ProblemInstance, RecourseSpec, enumerate_u_d, validate
from dataclasses import replace
import numpy as np
import unittest


def hand_instance():
    # x in {0,1,2}, U(x) = {u_c : u_c <= 3 - x}, y >= u_c; w* = 4 at x = 2
    first_stage = FirstStageSet(0, 1, [[1.0]], [0.0], [[0, 2]])
    ddu = DduSet(1, 0, [[1.0]], np.zeros((1, 0)), np.zeros((0, 1, 0)), [[-1.0]], [3.0], np.zeros((0, 2)))
    recourse = RecourseSpec(1, 0, np.zeros((1, 1)), [[1.0]], np.zeros((1, 0)), [[-1.0]], np.zeros((1, 0)),
                            [0.0], [2.0], np.zeros(0), np.zeros((0, 2)))
    return ProblemInstance(first_stage, ddu, recourse, [1.0], {'name': 'hand'})


class TestOracle(unittest.TestCase):
    def setUp(self):
        self.solver = create_solver('TestingConfig')
        self.backend = self.solver.run_config('oracle').backend()

    def test_classify(self):
        self.assertEqual(classify(tiny_facility(0, 'integer')).kind, 'pure_integer')
        self.assertEqual(classify(tiny_facility(0, 'vertex')).kind, 'lp_recourse_vertex')
        self.assertEqual(classify(tiny_facility(0, 'box', 'mip')).kind, 'singleton_slices')
        klass = classify(tiny_facility(0, 'vertex', n_sites=2))
        self.assertEqual((klass.x_count, klass.u_d_count), (3, 3))

    def test_budget(self):
        with self.assertRaises(BudgetExceeded):
            classify(tiny_facility(0, 'integer'), budget=1)

    def test_continuous_first_stage_rejected(self):
        instance = hand_instance()
        fs = FirstStageSet(1, 0, [[1.0]], [0.0], np.zeros((0, 2)))
        with self.assertRaises(InstanceError):
            classify(replace(instance, first_stage=fs))

    def test_slice_vertices(self):
        square = slice_vertices(np.eye(2), np.ones(2))
        self.assertEqual(len(square), 4)
        triangle = slice_vertices(np.ones((1, 2)), np.array([1.0]))
        self.assertEqual(len(triangle), 3)
        self.assertEqual(slice_vertices(np.eye(1), np.array([-1.0])), [])
        self.assertEqual(len(slice_vertices(np.zeros((1, 0)), np.array([0.0]))), 1)

    def test_hand_instance(self):
        result = solve_by_enumeration(hand_instance(), self.backend)
        self.assertEqual(result.kind, 'lp_recourse_vertex')
        self.assertAlmostEqual(result.w_star, 4.0, places=6)
        np.testing.assert_allclose(result.x_star, [2.0])
        self.assertEqual(result.evaluated, 3)

    def test_evaluate_x(self):
        instance = hand_instance()
        u_d = enumerate_u_d(instance)
        self.assertAlmostEqual(evaluate_x(instance, np.array([0.0]), self.backend, 'lp_recourse_vertex', u_d), 6.0)
        self.assertAlmostEqual(evaluate_x(instance, np.array([2.0]), self.backend, 'lp_recourse_vertex', u_d), 2.0)

    def test_run_oracle_report(self):
        report = self.solver.run('oracle', hand_instance())
        self.assertEqual(report.status, 'optimal')
        self.assertEqual(report.lower_bound, report.upper_bound)
        self.assertEqual(report.complexity['kind'], 'lp_recourse_vertex')

    def test_parallel_matches_serial(self):
        instance = tiny_facility(2, 'vertex')
        serial = solve_by_enumeration(instance, self.backend)
        parallel = solve_by_enumeration(instance, self.backend, workers=2)
        self.assertAlmostEqual(serial.w_star, parallel.w_star, places=6)

    def test_point_slices_required_for_mip_recourse(self):
        with self.assertRaises(InstanceError):
            solve_by_enumeration(tiny_facility(0, 'box', 'mip'), self.backend)
        result = solve_by_enumeration(pin_upper_corner(tiny_facility(0, 'box', 'mip')), self.backend)
        self.assertEqual(result.kind, 'singleton_slices')

    def test_pin_upper_corner(self):
        instance = tiny_facility(0, 'box', 'mip')
        twin = pin_upper_corner(instance)
        self.assertTrue(validate(twin).ok)
        self.assertEqual(twin.ddu.mu_u, 2 * instance.ddu.mu_u)
        with self.assertRaises(ValueError):
            pin_upper_corner(tiny_facility(0, 'mixed', 'mip'))

    def test_generator_is_registered(self):
        generate = self.solver.generators['tiny']
        a = generate(7, 'mixed', 'mip')
        b = tiny_facility(7, 'mixed', 'mip')
        self.assertEqual(a.digest(), b.digest())
        self.assertTrue(validate(a).ok)
        with self.assertRaises(ValueError):
            generate(7, 'ellipsoid')

    def test_suite_instances(self):
        pairs = list(suite_instances('nested', count=5))
        self.assertEqual(len(pairs), 5)
        self.assertTrue(all(twin is not None for _, twin in pairs))
        self.assertFalse(pairs[4][0].meta['relatively_complete'])
        self.assertTrue(pairs[0][0].meta['relatively_complete'])
        kinds = [inst.meta['uncertainty'] for inst, _ in suite_instances('miu', count=4)]
        self.assertEqual(kinds, ['integer', 'vertex', 'integer', 'vertex'])
        self.assertEqual(set(SUITES), {'miu', 'nested', 'extended', 'approx'})

    def test_run_suite(self):
        rows = run_suite(self.solver, 'miu', count=2)
        self.assertEqual(len(rows), 2)
        self.assertTrue(all(row.agree for row in rows))
        with self.assertRaises(InstanceError):
            run_suite(self.solver, 'unknown')
