from ddu_ro import create_solver
from ddu_ro.blueprints.rfl_bench.procedures import (RflConfig, check_pairing, dampening_check, generate_rfl,
                                                    plot_convergence, read_trace, run_table_experiment,
                                                    table_fields)
from ddu_ro.errors import ConfigError
from ddu_ro.models import Scenario, scenario_membership, validate
import numpy as np
import json
import os
import shutil
import tempfile
import unittest


class TestRflBench(unittest.TestCase):
    def setUp(self):
        self.solver = create_solver('TestingConfig')
        # every site within reach of every other
        self.small = {'n_sites': 3, 'grid_size': 10.0}
        self.output_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.output_dir, ignore_errors=True)

    def feasible_x(self, instance):
        n = instance.first_stage.m_x
        caps = instance.first_stage.A[n:2 * n, :n]
        # rows -x_c + cap_hi x_d >= 0 give cap_hi on the diagonal of the x_d block
        cap_hi = np.diag(instance.first_stage.A[n:2 * n, n:])
        self.assertTrue(np.all(caps.diagonal() == -1.0))
        return np.concatenate([cap_hi, np.ones(n)])

    def test_generated_instances_validate(self):
        for variant in ('L', 'I'):
            for ddu in ('C', 'I'):
                instance = generate_rfl(RflConfig(variant=variant, ddu=ddu, r=0.2, **self.small))
                self.assertTrue(validate(instance).ok, instance.name)
                self.assertEqual(instance.name, f"rfl-{variant}{ddu}-n3-r0.2-k1-s0")
                self.assertEqual(instance.ddu.m_u, 0 if ddu == 'C' else 6)
                self.assertEqual(instance.recourse.m_y, 0 if variant == 'L' else 3)
                self.assertEqual(instance.meta['rfl_config']['variant'], variant)

    def test_seed_changes_instance(self):
        config = RflConfig(**self.small)
        self.assertEqual(generate_rfl(config).digest(), generate_rfl(config, seed=0).digest())
        self.assertNotEqual(generate_rfl(config).digest(), generate_rfl(config, seed=1).digest())
        self.assertIs(self.solver.generators['rfl'], generate_rfl)

    def test_feasible_first_stage(self):
        instance = generate_rfl(RflConfig(**self.small))
        x = self.feasible_x(instance)
        self.assertTrue(np.all(instance.first_stage.A @ x >= instance.first_stage.b - 1e-9))

    def test_choice_set_inside_hull(self):
        hull = generate_rfl(RflConfig(ddu='C', r=0.3, **self.small))
        choice = generate_rfl(RflConfig(ddu='I', r=0.3, **self.small))
        x = self.feasible_x(choice)
        n = 3
        for delta_2 in ([0, 0, 1], [1, 0, 0], [0, 0, 0]):
            delta_1 = [1 - v for v in delta_2]
            u_d = np.array(delta_1 + delta_2, dtype=float)
            # smallest induced demand for this estimate choice
            u_c = choice.ddu.F_d(x)[:n] @ u_d
            self.assertTrue(scenario_membership(choice, x, Scenario(u_c, u_d)))
            self.assertTrue(scenario_membership(hull, x, Scenario(u_c, [])))

    def test_random_choice_points_inside_hull(self):
        hull = generate_rfl(RflConfig(ddu='C', r=0.4, **self.small))
        choice = generate_rfl(RflConfig(ddu='I', r=0.4, **self.small))
        cap_hi = self.feasible_x(choice)[:3]
        rng = np.random.default_rng(11)
        for _ in range(200):
            x_d = rng.integers(0, 2, 3).astype(float)
            x = np.concatenate([cap_hi * x_d, x_d])
            delta_2 = np.zeros(3)
            delta_2[rng.integers(0, 3)] = rng.integers(0, 2)
            u_d = np.concatenate([1.0 - delta_2, delta_2])
            F_d = choice.ddu.F_d(x)
            low, high = F_d[:3] @ u_d, -F_d[3:6] @ u_d
            u_c = low + rng.uniform(0.0, 1.0, 3) * (high - low)
            self.assertTrue(scenario_membership(choice, x, Scenario(u_c, u_d)))
            self.assertTrue(scenario_membership(hull, x, Scenario(u_c, [])))

    def test_choice_caps(self):
        choice = generate_rfl(RflConfig(ddu='I', **self.small))
        self.assertFalse(choice.ddu.pure_ok([0, 0, 0, 1, 1, 1]))
        self.assertFalse(choice.ddu.pure_ok([1, 0, 0, 0, 0, 0]))
        self.assertTrue(choice.ddu.pure_ok([1, 1, 0, 0, 0, 1]))

    def test_config_errors(self):
        with self.assertRaises(ConfigError):
            RflConfig(alpha=1.5)
        with self.assertRaises(ConfigError):
            RflConfig(n_sites=3, k1=1, k2=1)
        with self.assertRaises(ConfigError):
            RflConfig(cap_fractions=(0.5, 0.2))
        with self.assertRaises(ConfigError):
            RflConfig(variant='X')
        with self.assertRaises(ConfigError):
            check_pairing('L', 'C', 'nested')
        check_pairing('I', 'I', 'approx')
        with self.assertRaises(ConfigError):
            run_table_experiment(self.solver, 'L', r_grid=(), output_dir=self.output_dir)
        with self.assertRaises(ConfigError):
            run_table_experiment(self.solver, 'I', algorithms={'C': 'miu'}, output_dir=self.output_dir)

    def test_equal_estimates_give_equal_costs(self):
        hull = self.solver.run('miu', generate_rfl(RflConfig(ddu='C', r=0.0, **self.small)))
        choice = self.solver.run('miu', generate_rfl(RflConfig(ddu='I', r=0.0, **self.small)))
        self.assertEqual(hull.status, 'optimal')
        self.assertEqual(choice.status, 'optimal')
        self.assertLessEqual(abs(hull.upper_bound - choice.upper_bound), 1e-4 * max(1.0, abs(hull.upper_bound)))

    def test_temporary_capacity_variant(self):
        instance = generate_rfl(RflConfig(variant='I', n_sites=2, grid_size=10.0))
        report = self.solver.run('auto', instance)
        self.assertEqual(report.algorithm, 'nested')
        self.assertEqual(report.status, 'optimal')

    def test_small_table(self):
        table = run_table_experiment(self.solver, 'L', r_grid=(0.0, 0.2), k2_grid=(1,), rfl_overrides=self.small,
                                     output_dir=self.output_dir)
        self.assertEqual(len(table.rows), 2)
        for name in ('results.csv', 'results.md', os.path.join('trace', 'LC-r0.jsonl'),
                     os.path.join('trace', 'LI-r0.2-k1.png'), os.path.join('runs', 'LC-r0.2', 'report.json')):
            self.assertTrue(os.path.exists(os.path.join(self.output_dir, name)), name)
        with open(os.path.join(self.output_dir, 'results.csv')) as fh:
            header = fh.readline().strip().split(',')
        self.assertEqual(header, table_fields())
        first = table.row(0.0, 1)
        self.assertEqual(first['C_status'], 'optimal')
        self.assertEqual(first['I_status'], 'optimal')
        self.assertAlmostEqual(first['rel_diff'], 0.0, places=4)
        self.assertGreaterEqual(table.row(0.2, 1)['rel_diff'], -1e-5)
        self.assertEqual(table.as_dict()['variant'], 'L')
        self.assertEqual(dampening_check(table, table), [])
        with open(os.path.join(self.output_dir, 'cells.json')) as fh:
            cells = json.load(fh)
        self.assertEqual(len(cells), 4)
        self.assertTrue(all(cell['error'] is None for cell in cells))

    def test_plot_convergence(self):
        trace = os.path.join(self.output_dir, 'trace.jsonl')
        with open(trace, 'w') as fh:
            fh.write(json.dumps({'t': 1, 'LB': 0.0, 'UB': None}) + '\n')
            fh.write(json.dumps({'t': 2, 'LB': 3.0, 'UB': 5.0}) + '\n')
            fh.write(json.dumps({'t': 3, 'LB': 4.0, 'UB': 4.0}) + '\n')
        self.assertEqual(len(read_trace(trace)), 3)
        png = plot_convergence(trace, os.path.join(self.output_dir, 'trace.png'), 'demo')
        self.assertGreater(os.path.getsize(png), 0)
