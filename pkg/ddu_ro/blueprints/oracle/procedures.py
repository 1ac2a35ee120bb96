import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import oracle_bp
from .generators import pin_upper_corner, tiny_facility
from .schemas import oracle_result_schema, verify_report_schema
from ddu_ro.errors import BudgetExceeded, InstanceError
from ddu_ro.extensions import cache
from ddu_ro.models import Scenario, enumerate_u_d, enumerate_x
from ddu_ro.reformulate import recourse_lp, recourse_mip
from ddu_ro.utils.ledger import SolveReport, TraceWriter, vectors_close

logger = logging.getLogger(__name__)

MAX_VERTEX_DIM = 4
MAX_VERTEX_ROWS = 8


@dataclass
class OracleInstanceClass:
    kind: str
    budget: int
    x_count: int
    u_d_count: int


@dataclass
class OracleResult:
    kind: str
    w_star: float
    x_star: Optional[np.ndarray]
    evaluated: int = 0
    skipped: int = 0
    wall_time: float = 0.0

    def as_dict(self):
        return oracle_result_schema.dump(self)


def classify(instance, budget=100000):
    """pure_integer (n_u = 0), lp_recourse_vertex (m_y = 0) or singleton_slices (MIP recourse, pinned u_c)."""
    if instance.first_stage.n_x:
        raise InstanceError("the oracle enumerates X and needs a pure-integer first stage")
    x_count = len(enumerate_x(instance))
    u_d_count = len(enumerate_u_d(instance))
    if x_count * u_d_count > budget:
        raise BudgetExceeded(f"|X|*|U_d| = {x_count * u_d_count} exceeds the oracle budget {budget}")
    ddu, rec = instance.ddu, instance.recourse
    if ddu.n_u == 0:
        kind = 'pure_integer'
    elif rec.m_y == 0:
        if ddu.n_u > MAX_VERTEX_DIM or ddu.mu_u > MAX_VERTEX_ROWS:
            raise InstanceError(f"vertex enumeration needs n_u <= {MAX_VERTEX_DIM} and mu_u <= {MAX_VERTEX_ROWS}")
        kind = 'lp_recourse_vertex'
    else:
        # max of a min-of-convex function need not sit at a vertex; only point slices are sound
        kind = 'singleton_slices'
    return OracleInstanceClass(kind, budget, x_count, u_d_count)


def slice_vertices(F_c, rhs, tol=1e-9):
    """Vertices of {u_c >= 0 : F_c u_c <= rhs} by active-set enumeration; the slice is assumed bounded."""
    n = F_c.shape[1]
    if n == 0:
        return [np.zeros(0)] if np.all(rhs >= -tol) else []
    A = np.vstack([F_c, -np.eye(n)])
    b = np.concatenate([rhs, np.zeros(n)])
    found = []
    for rows in itertools.combinations(range(A.shape[0]), n):
        sub = A[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        v = np.linalg.solve(sub, b[list(rows)])
        if np.all(A @ v <= b + 1e-7 * np.maximum(1.0, np.abs(b))):
            v = np.where(np.abs(v) < 1e-12, 0.0, v)
            if not any(vectors_close(v, w, 1e-8) for w in found):
                found.append(v)
    return found


def recourse_value(instance, digest, x, scenario, backend, kind):
    rec = instance.recourse
    residual = rec.residual(x, scenario)
    key = f"{digest}:{','.join(f'{r:.9g}' for r in residual)}"
    value = cache.get(key)
    if value is None:
        solution = (recourse_lp if kind != 'singleton_slices' and rec.m_y == 0 else recourse_mip)(
            instance, x, scenario, backend)
        value = solution.value if solution.optimal else math.inf
        cache.set(key, value)
    return value


def evaluate_x(instance, x, backend, kind, u_d_points, digest=None):
    """eta_o(x): +inf if some scenario has no recourse, None if U(x) is empty."""
    ddu = instance.ddu
    digest = digest or instance.digest()
    worst = None
    for u_d in u_d_points:
        rhs = ddu.rhs(x) - (ddu.F_d(x) @ u_d if ddu.m_u else 0.0)
        vertices = slice_vertices(ddu.F_c, rhs)
        if not vertices:
            continue
        if kind == 'singleton_slices' and len(vertices) > 1:
            raise InstanceError(f"slice U(x|u_d={u_d.tolist()}) has {len(vertices)} vertices; "
                                "MIP recourse needs point slices for an exact oracle")
        for v in vertices:
            value = recourse_value(instance, digest, x, Scenario(v, u_d), backend, kind)
            worst = value if worst is None else max(worst, value)
            if math.isinf(worst):
                return worst
    return worst


def _evaluate_task(args):
    instance, x, backend, kind, u_d_points, digest = args
    return evaluate_x(instance, x, backend, kind, u_d_points, digest)


def solve_by_enumeration(instance, backend, budget=100000, workers=1, expect=None):
    started = time.perf_counter()
    klass = classify(instance, budget)
    if expect and klass.kind != expect:
        raise InstanceError(f"instance is of oracle class {klass.kind}, not {expect}")
    points = enumerate_x(instance)
    u_d_points = enumerate_u_d(instance)
    digest = instance.digest()
    tasks = [(instance, x, backend, klass.kind, u_d_points, digest) for x in points]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            etas = list(pool.map(_evaluate_task, tasks))
    else:
        etas = [_evaluate_task(task) for task in tasks]

    best, best_x, skipped = math.inf, None, 0
    for x, eta in zip(points, etas):
        if eta is None:
            logger.warning("U(x) is empty at x=%s; skipped", x.tolist())
            skipped += 1
            continue
        value = float(instance.c1 @ x) + eta
        if value < best - 1e-12:
            best, best_x = value, x
    result = OracleResult(klass.kind, best, best_x, len(points) - skipped, skipped, time.perf_counter() - started)
    logger.info("oracle %s on %s: w*=%s over %d points", klass.kind, instance.name, best, result.evaluated)
    return result


def oracle_exact_pure_integer(instance, backend, budget=100000, workers=1):
    return solve_by_enumeration(instance, backend, budget, workers, expect='pure_integer')


def oracle_lp_recourse_vertex(instance, backend, budget=100000, workers=1):
    return solve_by_enumeration(instance, backend, budget, workers, expect='lp_recourse_vertex')


@oracle_bp.algorithm('oracle')
def run_oracle(instance, config, backend=None, trace=None):
    backend = backend or config.backend()
    result = solve_by_enumeration(instance, backend, config.oracle_budget, config.workers)
    infeasible = math.isinf(result.w_star)
    report = SolveReport('oracle', 'infeasible' if infeasible else 'optimal', 'enumeration',
                         x=result.x_star, lower_bound=result.w_star, upper_bound=result.w_star,
                         instance_name=instance.name)
    report.timings['total'] = result.wall_time
    report.complexity = {'kind': result.kind, 'evaluated': result.evaluated, 'skipped': result.skipped}
    if trace is not None:
        trace.write(result.as_dict())
    return report


@dataclass
class VerifyReport:
    instance_name: str
    algorithm: str
    status: str
    oracle_value: float
    lower_bound: float
    upper_bound: float
    tolerance: float
    agree: bool
    detail: str = ''

    def as_dict(self):
        return verify_report_schema.dump(self)


def verify_instance(solver, instance, algorithm='auto', oracle_instance=None, run_dir=None, **overrides):
    """Solve with an algorithm and compare against the enumeration oracle (possibly on a pinned twin)."""
    config = solver.run_config('oracle', **overrides)
    oracle = solve_by_enumeration(oracle_instance or instance, config.backend(), config.oracle_budget,
                                  config.workers)
    report = solver.run(algorithm, instance, run_dir=run_dir, **overrides)
    w_star = oracle.w_star
    tol = max(config.tol_gap, 1e-6) * max(1.0, abs(w_star) if math.isfinite(w_star) else 1.0)

    if report.algorithm == 'approx':
        if math.isinf(w_star):
            agree = report.status in ('infeasible', 'rc-violated')
        else:
            agree = report.lower_bound - tol <= w_star <= report.upper_bound + tol
        detail = f"sandwich LB={report.lower_bound:.6g} <= w*={w_star:.6g} <= UB={report.upper_bound:.6g}"
    elif math.isinf(w_star):
        agree = report.status == 'infeasible'
        detail = 'oracle reports infeasible'
    else:
        agree = report.status == 'optimal' and abs(report.upper_bound - w_star) <= tol
        detail = f"|{report.upper_bound:.6g} - {w_star:.6g}| vs tol {tol:.3g}"
    if not agree:
        logger.warning("%s disagrees with the oracle on %s: %s (%s)", report.algorithm, instance.name,
                       detail, report.status)
    return VerifyReport(instance.name, report.algorithm, report.status, w_star, report.lower_bound,
                        report.upper_bound, tol, agree, detail)


SUITES = {
    'miu': {'count': 50, 'recourse': 'lp', 'uncertainty': ('integer', 'vertex')},
    'nested': {'count': 50, 'recourse': 'mip', 'uncertainty': ('box',)},
    'extended': {'count': 30, 'recourse': 'mip', 'uncertainty': ('mixed',)},
    'approx': {'count': 30, 'recourse': 'mip', 'uncertainty': ('mixed',)},
}


def suite_instances(kind, count=None, first_seed=0):
    """(instance, oracle twin or None) pairs; every fifth nested/extended instance drops the demand slack."""
    suite = SUITES[kind]
    for k in range(count or suite['count']):
        seed = first_seed + k
        uncertainty = suite['uncertainty'][k % len(suite['uncertainty'])]
        complete = kind in ('miu', 'approx') or k % 5 != 4
        instance = tiny_facility(seed, uncertainty, suite['recourse'], complete)
        twin = pin_upper_corner(instance) if uncertainty == 'box' and suite['recourse'] == 'mip' else None
        yield instance, twin


def run_suite(solver, kind, count=None, first_seed=0, **overrides):
    if kind not in SUITES:
        raise InstanceError(f"unknown suite '{kind}'")
    rows = []
    for instance, twin in suite_instances(kind, count, first_seed):
        rows.append(verify_instance(solver, instance, kind, oracle_instance=twin, **overrides))
    agreed = sum(row.agree for row in rows)
    logger.info("suite %s: %d/%d agree", kind, agreed, len(rows))
    return rows
