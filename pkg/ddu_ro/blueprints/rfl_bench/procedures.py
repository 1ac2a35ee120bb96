"""Robust facility location with induced demand, and the table experiments built on it.

Sites are both clients and candidate facilities. x = (x_c, x_d): service
capacities first, then the open/closed binaries. The induced demand of a
client is bounded by estimates from the facilities opened in its
neighbourhood; U^C keeps the safe hull of two estimates, U^I picks one
estimate per client through binaries delta^1, delta^2 under cardinality caps.
"""
import csv
import json
import logging
import math
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

from . import rfl_bench_bp
from .schemas import cell_results_schema, results_table_schema, rfl_config_schema
from ddu_ro.errors import ConfigError, InstanceError
from ddu_ro.extensions import init_logging
from ddu_ro.models import DduSet, FirstStageSet, ProblemInstance, RecourseSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RflConfig:
    variant: str = 'L'
    ddu: str = 'C'
    n_sites: int = 12
    r: float = 0.0
    k1: Optional[int] = None
    k2: int = 1
    seed: int = 0
    radius: float = 30.0
    grid_size: float = 100.0
    demand_range: Tuple[float, float] = (50.0, 300.0)
    f_range: Tuple[float, float] = (0.4, 2.4)
    a_range: Tuple[float, float] = (0.3, 0.5)
    cap_fractions: Tuple[float, float] = (0.1, 1.0)
    zeta_fractions: Tuple[float, float] = (0.01, 0.03)
    alpha: float = 0.5
    rho: float = 1.0
    coverage: bool = True
    h_range: Tuple[float, float] = (30.0, 80.0)
    temp_cost_factor: float = 5.0
    distance_cost: float = 0.01

    def __post_init__(self):
        if self.variant not in ('L', 'I'):
            raise ConfigError(f"unknown RFL variant '{self.variant}'")
        if self.ddu not in ('C', 'I'):
            raise ConfigError(f"unknown DDU kind '{self.ddu}'")
        if self.n_sites < 1:
            raise ConfigError("n_sites must be positive")
        if self.r < 0:
            raise ConfigError("r must be nonnegative")
        for name in ('cap_fractions', 'zeta_fractions'):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi <= 1):
                raise ConfigError(f"{name} must satisfy 0 < low <= high <= 1")
        if not (0 < self.alpha < 1):
            raise ConfigError("alpha must lie in (0, 1)")
        if self.k1 is None:
            object.__setattr__(self, 'k1', self.n_sites)
        if not (0 <= self.k1 <= self.n_sites and 0 <= self.k2 <= self.n_sites):
            raise ConfigError("cardinality caps must lie in [0, n_sites]")
        if self.k1 + self.k2 < self.n_sites:
            raise ConfigError("k1 + k2 < n_sites leaves no admissible estimate choice")

    def as_dict(self):
        return rfl_config_schema.dump(self)


@dataclass
class SiteData:
    coords: np.ndarray
    demand: np.ndarray
    distance: np.ndarray
    neighbours: np.ndarray
    reach: np.ndarray


def _sites(config, rng):
    n = config.n_sites
    coords = rng.uniform(0.0, config.grid_size, (n, 2))
    lo, hi = config.demand_range
    demand = rng.integers(int(lo), int(hi) + 1, n).astype(float)
    distance = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
    neighbours = distance <= config.radius
    # total nominal demand of J(j)
    reach = neighbours.astype(float) @ demand
    return SiteData(coords, demand, distance, neighbours, reach)


def _estimates(config, sites):
    """Per-(client, facility) bounds of the two estimates; zero outside J(i)."""
    lo, hi = config.zeta_fractions
    mask = sites.neighbours.astype(float)
    zeta_lo = mask * (lo * sites.reach)[None, :]
    zeta_hi = mask * (hi * sites.reach)[None, :]
    return zeta_lo, zeta_hi, (1.0 + config.r) * zeta_lo, (1.0 + config.r) * zeta_hi


def _first_stage(config, sites, induced_floor):
    n = config.n_sites
    cap_lo = np.maximum(config.cap_fractions[0] * sites.reach, induced_floor)
    cap_hi = config.cap_fractions[1] * sites.reach
    eye = np.eye(n)
    rows = [np.hstack([eye, -np.diag(cap_lo)]), np.hstack([-eye, np.diag(cap_hi)])]
    b = [np.zeros(n), np.zeros(n)]
    if config.coverage:
        if (1.0 - config.alpha) * cap_hi.sum() < sites.demand.sum() - 1e-9:
            raise InstanceError("coverage row cannot hold: enlarge the neighbourhood radius")
        rows.append(np.concatenate([np.full(n, 1.0 - config.alpha), np.zeros(n)])[None, :])
        b.append([sites.demand.sum()])
    return FirstStageSet(n, n, np.vstack(rows), np.concatenate(b), np.tile([0.0, 1.0], (n, 1)))


def _uncertainty_hull(config, lower, upper):
    """U^C: min(lower estimates) <= u_tilde <= max(upper estimates), summed over open neighbours."""
    n = config.n_sites
    eye = np.eye(n)
    F_c = np.vstack([-eye, eye, np.ones((1, n))])
    G = np.zeros((2 * n + 1, 2 * n))
    G[:n, n:] = -lower
    G[n:2 * n, n:] = upper
    G[2 * n, :n] = config.alpha
    return DduSet(n, 0, F_c, np.zeros((2 * n + 1, 0)), np.zeros((0, 2 * n + 1, 0)), G,
                  np.zeros(2 * n + 1), np.zeros((0, 2)))


def _uncertainty_choice(config, zeta_lo, zeta_hi, xi_lo, xi_hi):
    """U^I: u_d = (delta^1, delta^2); the chosen estimate enters through x_d * delta products."""
    n = config.n_sites
    eye = np.eye(n)
    mu = 2 * n + 1
    F_c = np.vstack([-eye, eye, np.ones((1, n))])
    F_d_lin = np.zeros((2 * n, mu, 2 * n))
    for j in range(n):
        k = n + j
        for i in range(n):
            F_d_lin[k, i, i] = zeta_lo[i, j]
            F_d_lin[k, i, n + i] = xi_lo[i, j]
            F_d_lin[k, n + i, i] = -zeta_hi[i, j]
            F_d_lin[k, n + i, n + i] = -xi_hi[i, j]
    G = np.zeros((mu, 2 * n))
    G[2 * n, :n] = config.alpha
    one_each = np.hstack([eye, eye])
    pure_A = np.vstack([one_each, -one_each,
                        np.concatenate([np.ones(n), np.zeros(n)]),
                        np.concatenate([np.zeros(n), np.ones(n)])])
    pure_b = np.concatenate([np.ones(n), -np.ones(n), [config.k1, config.k2]])
    return DduSet(n, 2 * n, F_c, np.zeros((mu, 2 * n)), F_d_lin, G, np.zeros(mu),
                  np.tile([0.0, 1.0], (2 * n, 1)), pure_A, pure_b)


def _recourse(config, sites, m_u, a_bar):
    n = config.n_sites
    n_y = n * n
    B2c = np.zeros((2 * n, n_y))
    for i in range(n):
        B2c[i, i * n:(i + 1) * n] = 1.0
        for j in range(n):
            B2c[n + j, i * n + j] = -1.0
    B1 = np.zeros((2 * n, 2 * n))
    B1[n:, :n] = np.eye(n)
    E_c = np.vstack([-np.eye(n), np.zeros((n, n))])
    d = np.concatenate([sites.demand, np.zeros(n)])
    c2c = (sites.distance * config.distance_cost * config.rho).reshape(-1)
    if config.variant == 'I':
        spread = np.ptp(sites.demand)
        scale = (sites.demand - sites.demand.min()) / spread if spread > 0 else np.zeros(n)
        h_lo, h_hi = config.h_range
        h = h_lo + (h_hi - h_lo) * scale
        B2d = np.vstack([np.zeros((n, n)), np.diag(h)])
        c2d = config.rho * config.temp_cost_factor * h * a_bar
        y_d_bounds = np.tile([0.0, 1.0], (n, 1))
    else:
        B2d, c2d, y_d_bounds = np.zeros((2 * n, 0)), np.zeros(0), np.zeros((0, 2))
    return RecourseSpec(n_y, B2d.shape[1], B1, B2c, B2d, E_c, np.zeros((2 * n, m_u)), d, c2c, c2d, y_d_bounds)


@rfl_bench_bp.generator('rfl')
def generate_rfl(config, seed=None):
    """Build one RFL-L / RFL-I instance with U^C or U^I; seed overrides config.seed."""
    if seed is not None:
        config = replace(config, seed=int(seed))
    rng = np.random.default_rng(config.seed)
    n = config.n_sites
    sites = _sites(config, rng)
    f = (sites.reach * rng.uniform(*config.f_range, n)).round(2)
    a = rng.uniform(*config.a_range, n).round(3)

    zeta_lo, zeta_hi, xi_lo, xi_hi = _estimates(config, sites)
    lower = np.minimum(zeta_lo, xi_lo)
    upper = np.maximum(zeta_hi, xi_hi)
    # opening j forces enough capacity that alpha * x_c,j covers its largest lower estimate
    induced_floor = np.maximum(zeta_lo, xi_lo).sum(axis=0) / config.alpha
    first_stage = _first_stage(config, sites, induced_floor)

    if config.ddu == 'C':
        ddu = _uncertainty_hull(config, lower, upper)
    else:
        ddu = _uncertainty_choice(config, zeta_lo, zeta_hi, xi_lo, xi_hi)
    recourse = _recourse(config, sites, ddu.m_u, float(a.max()))

    name = f"rfl-{config.variant}{config.ddu}-n{n}-r{config.r:g}-k{config.k2}-s{config.seed}"
    meta = {'name': name, 'provenance': 'generator:rfl', 'rfl_config': config.as_dict()}
    return ProblemInstance(first_stage, ddu, recourse, np.concatenate([a, f]), meta)


# table experiments

PAIRINGS = {
    ('L', 'C'): ('miu',),
    ('L', 'I'): ('miu',),
    ('I', 'C'): ('nested', 'approx'),
    ('I', 'I'): ('extended', 'approx'),
}
DEFAULT_ALGORITHMS = {'L': {'C': 'miu', 'I': 'miu'}, 'I': {'C': 'nested', 'I': 'extended'}}
ROW_FIELDS = ('status', 'LB', 'UB', 'gap', 'iterations', 'inner_iterations', 'time', 'error')


def check_pairing(variant, ddu, algorithm):
    allowed = PAIRINGS[(variant, ddu)]
    if algorithm not in allowed:
        raise ConfigError(f"RFL-{variant} with U^{ddu} is solved by {' or '.join(allowed)}, not {algorithm}")


@dataclass
class ResultsTable:
    variant: str
    algorithms: Dict[str, str]
    rows: List[dict] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    output_dir: Optional[str] = None

    def row(self, r, k2):
        return next((row for row in self.rows if row['r'] == r and row['k2'] == k2), None)

    def as_dict(self):
        return results_table_schema.dump(self)


def _run_cell(task):
    """Solve one cell in a fresh solver; failures come back as an error row."""
    from ddu_ro import create_solver

    cell, settings, algorithm, rfl_config, run_dir, overrides = task
    summary = {'cell': cell, 'ddu': rfl_config.ddu, 'algorithm': algorithm, 'status': 'error',
               'LB': -math.inf, 'UB': math.inf, 'gap': math.inf, 'iterations': 0,
               'inner_iterations': 0, 'time': 0.0, 'error': None}
    try:
        solver = create_solver()
        solver.config.update(settings)
        init_logging(solver.config['LOG_LEVEL'])
        instance = generate_rfl(rfl_config)
        report = solver.run(algorithm, instance, run_dir=run_dir, **overrides)
    except Exception as exc:
        logger.exception("cell %s failed", cell)
        summary['error'] = f"{type(exc).__name__}: {exc}"
        return summary
    summary.update(status=report.status, LB=report.lower_bound, UB=report.upper_bound, gap=report.gap,
                   iterations=report.iterations, inner_iterations=report.inner_iterations,
                   time=report.timings.get('total', 0.0))
    return summary


def read_trace(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def plot_convergence(trace_path, png_path, title=None):
    """Two-line LB/UB plot of a JSONL trace; infinite bounds are left out."""
    records = read_trace(trace_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, style in (('LB', 'o-'), ('UB', 's--')):
        points = [(rec['t'], rec[key]) for rec in records if rec.get(key) is not None]
        if points:
            ts, values = zip(*points)
            ax.plot(ts, values, style, label=key)
    ax.set_xlabel('iteration')
    ax.set_ylabel('objective')
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path)
    plt.close(fig)
    return png_path


def _fmt(value):
    if isinstance(value, float):
        if not math.isfinite(value):
            return '' if math.isnan(value) else ('inf' if value > 0 else '-inf')
        return f"{value:.6g}"
    return '' if value is None else str(value)


def write_csv(path, fieldnames, rows):
    with open(path, 'w', newline='') as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, extrasaction='ignore', lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _fmt(row.get(key)) for key in fieldnames})


def write_markdown(path, fieldnames, rows, title=None):
    lines = [f"# {title}", ''] if title else []
    lines.append('| ' + ' | '.join(fieldnames) + ' |')
    lines.append('|' + '---|' * len(fieldnames))
    for row in rows:
        lines.append('| ' + ' | '.join(_fmt(row.get(key)) for key in fieldnames) + ' |')
    with open(path, 'w') as fh:
        fh.write('\n'.join(lines) + '\n')


def table_fields():
    columns = ['r', 'k2']
    for ddu in ('C', 'I'):
        columns += [f"{ddu}_{name}" for name in ROW_FIELDS]
    return columns + ['rel_diff']


def _ordering_checks(table, r_grid, k2_grid, tol):
    """Conservatism (U^C >= U^I), U^C nondecreasing in r, U^I nondecreasing in k2."""
    def slack(value):
        return tol * max(1.0, abs(value))

    for row in table.rows:
        c, i = row['C_UB'], row['I_UB']
        if math.isfinite(c) and math.isfinite(i) and c < i - slack(i):
            table.warnings.append(f"r={row['r']:g} k2={row['k2']}: cost with U^C {c:.6g} below U^I {i:.6g}")
    c_costs = [table.row(r, k2_grid[0])['C_UB'] for r in r_grid]
    for (r0, v0), (r1, v1) in zip(zip(r_grid, c_costs), zip(r_grid[1:], c_costs[1:])):
        if math.isfinite(v0) and math.isfinite(v1) and v1 < v0 - slack(v0):
            table.warnings.append(f"U^C cost decreases from r={r0:g} to r={r1:g}")
    for r in r_grid:
        i_costs = [table.row(r, k2)['I_UB'] for k2 in k2_grid]
        for (k0, v0), (k1, v1) in zip(zip(k2_grid, i_costs), zip(k2_grid[1:], i_costs[1:])):
            if math.isfinite(v0) and math.isfinite(v1) and v1 < v0 - slack(v0):
                table.warnings.append(f"U^I cost decreases from k2={k0} to k2={k1} at r={r:g}")
    for message in table.warnings:
        logger.warning(message)


def run_table_experiment(solver, variant='L', r_grid=(0.1, 0.2, 0.3, 0.4, 0.5), k2_grid=(1, 2, 3, 4, 5),
                         algorithms=None, rfl_overrides=None, output_dir=None, workers=None, **overrides):
    """Solve every (r, k2) cell with U^C and U^I and write the results table.

    U^C does not depend on k2, so it is solved once per r and shared across the row.
    """
    algorithms = {**DEFAULT_ALGORITHMS[variant], **(algorithms or {})}
    for ddu, algorithm in algorithms.items():
        check_pairing(variant, ddu, algorithm)
    r_grid, k2_grid = list(r_grid), list(k2_grid)
    if not (r_grid and k2_grid):
        raise ConfigError("the r and k2 grids must not be empty")
    config = solver.run_config('auto', **overrides)
    output_dir = output_dir or os.path.join(config.output_dir, f"table-{variant}")
    workers = workers or config.workers
    base = RflConfig(variant=variant, **(rfl_overrides or {}))
    settings = dict(solver.config)
    os.makedirs(os.path.join(output_dir, 'trace'), exist_ok=True)

    tasks = []
    for r in r_grid:
        cell = f"{variant}C-r{r:g}"
        tasks.append((cell, settings, algorithms['C'], replace(base, ddu='C', r=r),
                      os.path.join(output_dir, 'runs', cell), overrides))
        for k2 in k2_grid:
            cell = f"{variant}I-r{r:g}-k{k2}"
            tasks.append((cell, settings, algorithms['I'], replace(base, ddu='I', r=r, k2=k2),
                          os.path.join(output_dir, 'runs', cell), overrides))

    logger.info("table RFL-%s: %d cells on %d worker(s)", variant, len(tasks), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_run_cell, tasks))
    else:
        summaries = [_run_cell(task) for task in tasks]
    by_cell = {summary['cell']: summary for summary in summaries}
    with open(os.path.join(output_dir, 'cells.json'), 'w') as fh:
        json.dump(cell_results_schema.dump(summaries), fh, indent=2)

    for summary in summaries:
        run_trace = os.path.join(output_dir, 'runs', summary['cell'], 'trace.jsonl')
        if not os.path.exists(run_trace):
            continue
        target = os.path.join(output_dir, 'trace', f"{summary['cell']}.jsonl")
        shutil.copyfile(run_trace, target)
        plot_convergence(target, target[:-len('.jsonl')] + '.png', f"RFL-{variant} {summary['cell']}")

    table = ResultsTable(variant, algorithms, output_dir=output_dir)
    for r in r_grid:
        for k2 in k2_grid:
            row = {'r': r, 'k2': k2}
            for ddu, summary in (('C', by_cell[f"{variant}C-r{r:g}"]), ('I', by_cell[f"{variant}I-r{r:g}-k{k2}"])):
                row.update({f"{ddu}_{name}": summary[name] for name in ROW_FIELDS})
            c, i = row['C_UB'], row['I_UB']
            row['rel_diff'] = (c - i) / max(1.0, abs(i)) if math.isfinite(c) and math.isfinite(i) else math.nan
            table.rows.append(row)
            logger.debug("row r=%g k2=%d: %s / %s", r, k2, row["C_status"], row["I_status"])

    _ordering_checks(table, r_grid, k2_grid, max(config.tol_gap, 1e-6))
    fieldnames = table_fields()
    write_csv(os.path.join(output_dir, 'results.csv'), fieldnames, table.rows)
    write_markdown(os.path.join(output_dir, 'results.md'), fieldnames, table.rows,
                   f"RFL-{variant}: U^C by {algorithms['C']}, U^I by {algorithms['I']}")
    return table


def dampening_check(table_l, table_i):
    """Warn where the U^C / U^I cost difference is not smaller for RFL-I than for RFL-L."""
    warnings = []
    for row_i in table_i.rows:
        row_l = table_l.row(row_i['r'], row_i['k2'])
        if row_l is None or math.isnan(row_l['rel_diff']) or math.isnan(row_i['rel_diff']):
            continue
        if row_i['rel_diff'] > row_l['rel_diff']:
            warnings.append(f"r={row_i['r']:g} k2={row_i['k2']}: RFL-I difference {row_i['rel_diff']:.3g} "
                            f"exceeds RFL-L {row_l['rel_diff']:.3g}")
    for message in warnings:
        logger.warning(message)
    return warnings
