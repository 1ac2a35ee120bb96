from ddu_ro import create_solver
from ddu_ro.errors import BackendError, RayError
from ddu_ro.models import RecourseSpec
from ddu_ro.utils.milp import BigMConfig, extreme_ray_of_Pi, max_over_dual, solve_lp_with_duals
import numpy as np
import unittest


class TestMilp(unittest.TestCase):
    def setUp(self):
        self.solver = create_solver('TestingConfig')
        self.backend = self.solver.run_config().backend()
        # one column, rows y >= r1 and -y >= r2
        self.recourse = RecourseSpec(1, 0, np.zeros((2, 0)), [[1.0], [-1.0]], np.zeros((2, 0)), np.zeros((2, 0)),
                                     np.zeros((2, 0)), [0.0, 0.0], [1.0], np.zeros(0), np.zeros((0, 2)))

    def test_lp_optimum_and_duals(self):
        handle = self.backend.model('lp', sense='min')
        y1, y2 = handle.add_vars('y', 2)
        self.assertEqual((y1, y2), ('y[0]', 'y[1]'))
        cover = handle.add_row('cover', [(y1, 1.0), (y2, 1.0)], '>=', 3.0)
        handle.add_row('cap', [(y1, 1.0)], '<=', 2.0)
        handle.set_objective([(y1, 1.0), (y2, 2.0)])
        outcome = solve_lp_with_duals(handle)
        self.assertEqual(outcome.status, 'optimal')
        self.assertAlmostEqual(outcome.objective, 4.0, places=6)
        np.testing.assert_allclose(outcome.values([y1, y2]), [2.0, 1.0], atol=1e-6)
        self.assertAlmostEqual(abs(outcome.dual[cover]), 2.0, places=6)

    def test_infeasible_status(self):
        handle = self.backend.model('bad', sense='min')
        y = handle.add_var('y', lb=0.0, ub=1.0)
        handle.add_row('low', [(y, 1.0)], '>=', 2.0)
        handle.set_objective([(y, 1.0)])
        self.assertEqual(handle.solve().status, 'infeasible')

    def test_integer_model(self):
        handle = self.backend.model('ip', sense='max')
        z = handle.add_var('z', 'int', 0, 10)
        handle.add_row('half', [(z, 2.0)], '<=', 7.0)
        handle.set_objective([(z, 1.0)])
        outcome = handle.solve()
        self.assertAlmostEqual(outcome.objective, 3.0, places=6)
        with self.assertRaises(BackendError):
            solve_lp_with_duals(handle)

    def test_model_errors(self):
        handle = self.backend.model('errors')
        handle.add_var('y')
        with self.assertRaises(BackendError):
            handle.add_var('y')
        with self.assertRaises(BackendError):
            handle.add_var('z', 'int')
        with self.assertRaises(BackendError):
            handle.add_row('r', [('missing', 1.0)], '>=', 0.0)
        with self.assertRaises(BackendError):
            handle.add_var('w', 'semi')

    def test_unknown_backend(self):
        from ddu_ro.utils.milp import Backend
        with self.assertRaises(BackendError):
            Backend('CPLEX-9')

    def test_constant_rows(self):
        handle = self.backend.model('constants')
        self.assertIsNone(handle.add_row('trivial', [], '<=', 1.0))
        y = handle.add_var('y')
        handle.add_row('violated', [(y, 0.0)], '>=', 1.0)
        handle.set_objective([(y, 1.0)])
        self.assertEqual(handle.solve().status, 'infeasible')

    def test_bigm_config(self):
        bigm = BigMConfig(100.0, {'dual': 5.0})
        self.assertEqual(bigm.get('dual'), 5.0)
        self.assertEqual(bigm.get('penalty'), 100.0)
        with self.assertRaises(ValueError):
            BigMConfig(0.0)
        with self.assertRaises(ValueError):
            BigMConfig(1.0, {'indicator': -1.0})
        with self.assertRaises(ValueError):
            BigMConfig(float('inf'))

    def test_max_over_dual(self):
        status, value, pi = max_over_dual(self.backend, self.recourse.B2c, self.recourse.c2c, [1.0, -3.0])
        self.assertEqual(status, 'optimal')
        self.assertAlmostEqual(value, 1.0, places=6)
        np.testing.assert_allclose(pi, [1.0, 0.0], atol=1e-6)

    def test_extreme_ray(self):
        ray = extreme_ray_of_Pi(self.recourse, np.array([3.0, -1.0]), self.backend)
        self.assertAlmostEqual(ray.value, 1.0, places=6)
        np.testing.assert_allclose(ray.gamma, [0.5, 0.5], atol=1e-6)
        self.assertLessEqual(ray.gamma.sum(), 1.0 + 1e-9)

    def test_ray_of_feasible_system(self):
        with self.assertRaises(RayError):
            extreme_ray_of_Pi(self.recourse, np.array([1.0, -2.0]), self.backend)
