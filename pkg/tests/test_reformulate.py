from ddu_ro import create_solver
from ddu_ro.blueprints.ccg_miu.procedures import build_master_miu
from ddu_ro.blueprints.nested.procedures import build_omp
from ddu_ro.blueprints.oracle.generators import tiny_facility
from ddu_ro.models import DduSet, FirstStageSet, ProblemInstance, RecourseSpec, Scenario
from ddu_ro.reformulate import (InnerLP, ReformulationCheck, add_kkt, add_uncertainty, build_OU_point,
                                build_OU_tuple, build_parametric_lp, check_master, check_slack_dichotomy, in_Pi,
                                kkt_of_recourse_lp, kkt_products, recourse_lp, recourse_mip, recourse_residual,
                                relaxed_recourse_lp, u_section_nonempty)
import numpy as np
import unittest


def hand_instance():
    # x in {0,1,2}, U(x) = {u_c : u_c <= 3 - x}, y >= u_c; w* = 4 at x = 2
    first_stage = FirstStageSet(0, 1, [[1.0]], [0.0], [[0, 2]])
    ddu = DduSet(1, 0, [[1.0]], np.zeros((1, 0)), np.zeros((0, 1, 0)), [[-1.0]], [3.0], np.zeros((0, 2)))
    recourse = RecourseSpec(1, 0, np.zeros((1, 1)), [[1.0]], np.zeros((1, 0)), [[-1.0]], np.zeros((1, 0)),
                            [0.0], [2.0], np.zeros(0), np.zeros((0, 2)))
    return ProblemInstance(first_stage, ddu, recourse, [1.0], {'name': 'hand'})


def random_point(instance, rng):
    fs, ddu = instance.first_stage, instance.ddu
    x_d = [rng.integers(int(lo), int(hi) + 1) for lo, hi in fs.integer_bounds]
    u_d = [rng.integers(int(lo), int(hi) + 1) for lo, hi in ddu.u_d_bounds]
    x = np.concatenate([rng.uniform(0.0, 3.0, fs.n_x), np.asarray(x_d, dtype=float)])
    return x, np.asarray(u_d, dtype=float)


class TestReformulate(unittest.TestCase):
    def setUp(self):
        self.solver = create_solver('TestingConfig')
        self.config = self.solver.run_config()
        self.backend = self.config.backend()
        self.bigm = self.config.bigm()
        self.instance = hand_instance()

    def test_kkt_makes_inner_lp_exact(self):
        # max_u min{2y : y >= u}, u in [0, 3]
        handle = self.backend.model('kkt', sense='max')
        u = handle.add_var('u', 'cont', 0.0, 3.0)
        lp = InnerLP(1)
        lp.add_group('y', [[1.0]], 2.0)
        lp.add_rhs([[1.0]], [u])
        block = add_kkt(handle, 'inner', lp, self.bigm)
        handle.set_objective(block.objective)
        outcome = handle.solve()
        self.assertEqual(outcome.status, 'optimal')
        self.assertAlmostEqual(outcome.objective, 6.0, places=5)
        self.assertAlmostEqual(outcome.value(block['y'][0]), 3.0, places=5)

    def test_parametric_lp_slack_is_zero_when_nonempty(self):
        handle = build_parametric_lp(self.instance, [1.0], [], np.zeros(1), self.backend, self.bigm)
        outcome = handle.solve()
        self.assertEqual(outcome.status, 'optimal')
        self.assertAlmostEqual(outcome.values(['ut[0]']).sum(), 0.0, places=6)

    def test_parametric_lp_slack_when_empty(self):
        handle = build_parametric_lp(self.instance, [4.0], [], np.zeros(1), self.backend, self.bigm)
        outcome = handle.solve()
        self.assertEqual(outcome.status, 'optimal')
        self.assertGreater(outcome.values(['ut[0]']).sum(), 0.5)

    def test_parametric_lp_dimension_check(self):
        with self.assertRaises(ValueError):
            build_parametric_lp(self.instance, [1.0], [], np.zeros(3), self.backend, self.bigm)

    def test_empty_pairs_rejected(self):
        handle = self.backend.model('ou', sense='min')
        with self.assertRaises(ValueError):
            build_OU_tuple(handle, self.instance, [], self.bigm, [1.0], 'ou')

    def test_duplicate_pairs_rejected(self):
        instance = tiny_facility(4, 'box', 'mip')
        handle = self.backend.model('ou', sense='min')
        y_d = np.ones(instance.recourse.m_y)
        pi = np.zeros(instance.recourse.mu_y)
        with self.assertRaises(ValueError):
            build_OU_tuple(handle, instance, [(y_d, pi), (y_d, pi)], self.bigm, np.ones(instance.first_stage.size), 'ou')

    def test_ou_point_picks_worst_u(self):
        # with pi = 1 the parametric objective is u_c; at x = 1 the largest u_c is 2
        handle = self.backend.model('ou_point', sense='max')
        block = build_OU_point(handle, self.instance, [], [1.0], self.bigm, [1.0], 'ou')
        handle.set_objective([(block.u_c[0], 1.0), (block.theta, -10.0)])
        outcome = handle.solve()
        self.assertAlmostEqual(outcome.value(block.u_c[0]), 2.0, places=5)
        self.assertAlmostEqual(outcome.value(block.theta), 0.0, places=6)

    def test_kkt_of_recourse_lp(self):
        handle = self.backend.model('sp', sense='max')
        uc, ud = add_uncertainty(handle, self.instance, [2.0])
        rkkt = kkt_of_recourse_lp(handle, self.instance, 'rec', self.bigm, [2.0], uc, ud)
        handle.set_objective(rkkt.value_terms, rkkt.constant)
        outcome = handle.solve()
        self.assertEqual(outcome.status, 'optimal')
        self.assertAlmostEqual(outcome.objective, 2.0, places=5)

    def test_recourse_lp_dual_in_Pi(self):
        instance = tiny_facility(3, 'box')
        x = np.ones(instance.first_stage.size)
        scenario = Scenario(np.ones(instance.ddu.n_u), [])
        solution = recourse_lp(instance, x, scenario, self.backend)
        self.assertTrue(solution.optimal)
        self.assertTrue(in_Pi(instance.recourse, solution.pi))
        residual = recourse_residual(instance, x, scenario)
        self.assertAlmostEqual(float(residual @ solution.pi), solution.value, places=5)

    def test_relaxed_recourse_below_mip(self):
        instance = tiny_facility(4, 'box', 'mip')
        x = np.zeros(instance.first_stage.size)
        x[0] = 1.0
        scenario = Scenario(np.full(instance.ddu.n_u, 2.0), [])
        relaxed = relaxed_recourse_lp(instance, x, scenario, self.backend)
        exact = recourse_mip(instance, x, scenario, self.backend)
        self.assertTrue(relaxed.optimal and exact.optimal)
        self.assertLessEqual(relaxed.value, exact.value + 1e-6)
        np.testing.assert_allclose(exact.y_d, np.round(exact.y_d))

    def test_u_section(self):
        self.assertTrue(u_section_nonempty(self.instance, [3.0], [], self.backend))
        self.assertFalse(u_section_nonempty(self.instance, [3.5], [], self.backend))

    def test_slack_dichotomy_on_hand_instance(self):
        check = ReformulationCheck()
        for x in np.linspace(0.0, 5.0, 11):
            check_slack_dichotomy(self.instance, [x], [], [1.0], self.backend, self.bigm, check=check)
        self.assertEqual(check.checked, 11)
        self.assertTrue(check.ok, check.violations)

    def test_slack_dichotomy_on_random_points(self):
        rng = np.random.default_rng(7)
        for uncertainty in ('integer', 'mixed'):
            instance = tiny_facility(0, uncertainty)
            check = ReformulationCheck()
            for _ in range(200):
                x, u_d = random_point(instance, rng)
                beta = rng.uniform(0.0, 1.0, instance.recourse.mu_y)
                check_slack_dichotomy(instance, x, u_d, beta, self.backend, self.bigm, check=check)
            self.assertEqual(check.checked, 200)
            self.assertTrue(check.ok, f"{instance.name}: {check.violations[:3]}")

    def test_kkt_products_vanish(self):
        handle = self.backend.model('kkt', sense='max')
        u = handle.add_var('u', 'cont', 0.0, 3.0)
        lp = InnerLP(1)
        lp.add_group('y', [[1.0]], 2.0)
        lp.add_rhs([[1.0]], [u])
        block = add_kkt(handle, 'inner', lp, self.bigm)
        handle.set_objective(block.objective)
        products = kkt_products(block, handle.solve())
        self.assertEqual(len(products), 2)
        self.assertLessEqual(products.max(), 1e-6)

    def assert_master_checks(self, instance, master):
        outcome = master.solve()
        self.assertIn(outcome.status, ('optimal', 'infeasible'))
        if outcome.status == 'optimal':
            check = check_master(master, outcome, self.backend)
            self.assertTrue(check.ok, f"{instance.name}: {check.violations}")
            self.assertGreaterEqual(check.checked, len(master.blocks))

    def test_solved_miu_masters(self):
        for instance in [self.instance] + [tiny_facility(seed, 'integer') for seed in range(3)]:
            report = self.solver.run('miu', instance, init_strategy='naive')
            master = build_master_miu(instance, report.cuts, self.bigm, self.backend)
            self.assert_master_checks(instance, master)

    def test_solved_nested_masters(self):
        for seed in range(2):
            instance = tiny_facility(seed, 'box', 'mip')
            report = self.solver.run('nested', instance, init_strategy='naive')
            self.assertGreaterEqual(len(report.cuts), 1)
            self.assert_master_checks(instance, build_omp(instance, report.cuts, self.bigm, self.backend))
