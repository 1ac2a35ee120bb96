from ddu_ro import create_solver
from ddu_ro.blueprints.ccg_miu.procedures import (CutRecordMIU, MasterMIU, run_ccg_miu, solve_sp1, solve_sp2,
                                                  solve_sp3)
from ddu_ro.blueprints.oracle.generators import tiny_facility
from ddu_ro.blueprints.oracle.procedures import verify_instance
from ddu_ro.errors import InstanceError
from ddu_ro.models import (DduSet, FirstStageSet, ProblemInstance, RecourseSpec, add_recourse_column,
                           tighten_u_d_box)
from ddu_ro.utils.ledger import CutLedger
from dataclasses import replace
import numpy as np
import json
import os
import shutil
import tempfile
import unittest


def hand_instance():
    # x in {0,1,2}, U(x) = {u_c : u_c <= 3 - x}, y >= u_c; w* = 4 at x = 2
    first_stage = FirstStageSet(0, 1, [[1.0]], [0.0], [[0, 2]])
    ddu = DduSet(1, 0, [[1.0]], np.zeros((1, 0)), np.zeros((0, 1, 0)), [[-1.0]], [3.0], np.zeros((0, 2)))
    recourse = RecourseSpec(1, 0, np.zeros((1, 1)), [[1.0]], np.zeros((1, 0)), [[-1.0]], np.zeros((1, 0)),
                            [0.0], [2.0], np.zeros(0), np.zeros((0, 2)))
    return ProblemInstance(first_stage, ddu, recourse, [1.0], {'name': 'hand'})


def infeasible_instance():
    # y >= 1 and -y >= 0 for every x and u
    instance = hand_instance()
    rec = replace(instance.recourse, B1=np.zeros((2, 1)), B2c=np.array([[1.0], [-1.0]]), B2d=np.zeros((2, 0)),
                  E_c=np.zeros((2, 1)), E_d=np.zeros((2, 0)), d=np.array([1.0, 0.0]))
    return replace(instance, recourse=rec, meta={'name': 'hand-infeasible'})


class TestCcgMiu(unittest.TestCase):
    def setUp(self):
        self.solver = create_solver('TestingConfig')
        self.config = self.solver.run_config('miu')
        self.backend = self.config.backend()
        self.bigm = self.config.bigm()
        self.instance = hand_instance()
        self.run_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.run_dir, ignore_errors=True)

    def test_hand_instance_optimum(self):
        report = self.solver.run('miu', self.instance)
        self.assertEqual(report.status, 'optimal')
        self.assertAlmostEqual(report.upper_bound, 4.0, places=5)
        np.testing.assert_allclose(report.x, [2.0])
        self.assertAlmostEqual(report.w_R, 0.0, places=6)
        self.assertLessEqual(report.lower_bound, report.upper_bound + 1e-6)

    def test_auto_dispatches_to_miu(self):
        self.assertEqual(self.solver.dispatch('auto', self.instance), 'miu')
        report = self.solver.run('auto', self.instance)
        self.assertEqual(report.algorithm, 'miu')

    def test_naive_init(self):
        report = self.solver.run('miu', self.instance, init_strategy='naive')
        self.assertEqual(report.status, 'optimal')
        self.assertAlmostEqual(report.upper_bound, 4.0, places=5)
        self.assertIsNone(report.w_R)

    def test_iteration_limit(self):
        report = self.solver.run('miu', self.instance, init_strategy='naive', max_iterations=1)
        self.assertEqual(report.status, 'limit')
        self.assertEqual(report.stop_reason, 'iter_limit')
        self.assertLess(report.lower_bound, report.upper_bound)

    def test_infeasible_instance(self):
        report = self.solver.run('miu', infeasible_instance())
        self.assertEqual(report.status, 'infeasible')

    def test_mip_recourse_rejected(self):
        with self.assertRaises(InstanceError):
            run_ccg_miu(tiny_facility(0, 'box', 'mip'), self.config, self.backend)

    def test_subproblems(self):
        x = np.array([1.0])
        sp1 = solve_sp1(self.instance, x, self.backend, self.bigm)
        self.assertEqual(sp1.status, 'optimal')
        self.assertAlmostEqual(sp1.value, 0.0, places=6)
        sp2 = solve_sp2(self.instance, x, self.backend, self.bigm)
        self.assertAlmostEqual(sp2.value, 4.0, places=5)
        self.assertAlmostEqual(sp2.scenario.u_c[0], 2.0, places=5)
        np.testing.assert_allclose(sp2.dual, [2.0], atol=1e-6)

        bad = infeasible_instance()
        sp1 = solve_sp1(bad, x, self.backend, self.bigm)
        self.assertGreater(sp1.value, 0.5)
        sp3 = solve_sp3(bad, x, sp1.scenario, self.backend)
        self.assertGreater(sp3.value, 0.0)
        self.assertLessEqual(sp3.dual.sum(), 1.0 + 1e-9)

    def test_eta_floor_dropped_after_first_record(self):
        master = MasterMIU(self.instance, self.bigm, self.backend)
        self.assertIn('eta.floor', master.handle.constraints)
        empty = master.solve()
        self.assertAlmostEqual(empty.objective, -self.bigm.get('eta_floor'), places=4)
        master.add_record(CutRecordMIU(np.zeros(0), np.array([2.0]), 'optimality', 1))
        self.assertNotIn('eta.floor', master.handle.constraints)
        self.assertAlmostEqual(master.solve().objective, 4.0, places=5)
        master.add_record(CutRecordMIU(np.zeros(0), np.array([1.0]), 'optimality', 2))
        self.assertEqual(len(master.blocks), 2)

    def test_cut_ledger_rejects_repeats(self):
        cuts = CutLedger()
        first = CutRecordMIU(np.zeros(0), np.array([2.0]), 'optimality', 1)
        again = CutRecordMIU(np.zeros(0), np.array([2.0 + 1e-9]), 'optimality', 2)
        feasibility = CutRecordMIU(np.zeros(0), np.array([2.0]), 'feasibility', 3)
        self.assertTrue(cuts.add(first))
        self.assertFalse(cuts.add(again))
        self.assertTrue(cuts.add(feasibility))
        self.assertEqual(len(cuts), 2)
        self.assertEqual(cuts.distinct_duals(), 1)

    def test_run_dir_outputs(self):
        report = self.solver.run('miu', self.instance, run_dir=self.run_dir)
        for name in ('config.json', 'instance.sha256', 'trace.jsonl', 'report.json'):
            self.assertTrue(os.path.exists(os.path.join(self.run_dir, name)), name)
        with open(os.path.join(self.run_dir, 'report.json')) as fh:
            saved = json.load(fh)
        self.assertEqual(saved['status'], 'optimal')
        self.assertEqual(saved['instance_hash'], self.instance.digest())
        with open(os.path.join(self.run_dir, 'trace.jsonl')) as fh:
            lines = [json.loads(line) for line in fh]
        self.assertEqual(len(lines), len(report.ledger.records))
        for prev, cur in zip(lines, lines[1:]):
            self.assertGreaterEqual(cur['LB'], prev['LB'] - 1e-9)
            self.assertLessEqual(cur['UB'], prev['UB'] + 1e-9)

    def test_agrees_with_oracle(self):
        for seed in range(3):
            for uncertainty in ('integer', 'vertex'):
                instance = tiny_facility(seed, uncertainty)
                verdict = verify_instance(self.solver, instance, 'miu')
                self.assertTrue(verdict.agree, f"{instance.name}: {verdict.detail}")

    def test_relaxation_ordering(self):
        instance = tiny_facility(5, 'integer')
        base = self.solver.run('miu', instance)
        self.assertEqual(base.status, 'optimal')
        self.assertLessEqual(base.w_R, base.upper_bound + 1e-6)

        smaller_u = self.solver.run('miu', tighten_u_d_box(instance, 0, 1))
        self.assertLessEqual(smaller_u.upper_bound, base.upper_bound + 1e-6)

        cheap_column = np.zeros(instance.recourse.mu_y)
        cheap_column[0] = 1.0
        larger_y = self.solver.run('miu', add_recourse_column(instance, cheap_column, 0.5))
        self.assertLessEqual(larger_y.upper_bound, base.upper_bound + 1e-6)

    def test_bounds_and_complexity(self):
        report = self.solver.run('miu', tiny_facility(1, 'integer'))
        self.assertEqual(report.ledger.violations(), [])
        self.assertEqual(report.complexity['u_d_count'], 64)
        self.assertTrue(report.complexity['within_bound'])
