import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ccg_miu_bp
from .schemas import cut_record_schema, subproblem_result_schema
from ddu_ro.errors import BackendError, InstanceError
from ddu_ro.models import Scenario, add_first_stage, count_u_d, relaxation_bound_wR
from ddu_ro.reformulate import (add_uncertainty, build_OU_point, kkt_of_recourse_lp, recourse_lp,
                                recourse_residual, slack_recourse)
from ddu_ro.utils.ledger import CutLedger, SolveReport, TraceWriter, iteration_cap_check, vectors_close
from ddu_ro.utils.milp import extreme_ray_of_Pi

logger = logging.getLogger(__name__)


@dataclass
class CutRecordMIU:
    u_d: np.ndarray
    dual: np.ndarray
    origin: str
    iteration: int

    @property
    def is_feasibility(self):
        return self.origin == 'feasibility'

    def same_as(self, other, tol=1e-6):
        return (self.is_feasibility == other.is_feasibility
                and vectors_close(self.u_d, other.u_d, tol)
                and vectors_close(self.dual, other.dual, tol))

    def dual_vectors(self):
        return [self.dual]

    def as_dict(self):
        return cut_record_schema.dump(self)


@dataclass
class SubproblemResult:
    status: str
    value: Optional[float] = None
    scenario: Optional[Scenario] = None
    dual: Optional[np.ndarray] = None
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return subproblem_result_schema.dump(self)


class MasterMIU:
    """min c1 x + eta over X plus one OU/OV block and replicated recourse per record."""

    def __init__(self, instance, bigm, backend, integer_y_d=False):
        self.instance = instance
        self.bigm = bigm
        self.integer_y_d = integer_y_d
        self.handle = backend.model('master', sense='min')
        self.x = add_first_stage(self.handle, instance)
        self.eta = self.handle.add_var('eta', 'free')
        self.handle.add_row('eta.floor', [(self.eta, 1.0)], '>=', -bigm.get('eta_floor'))
        self.handle.set_objective(list(zip(self.x, instance.c1)) + [(self.eta, 1.0)])
        self.blocks = []

    def add_floor(self, value):
        self.handle.add_row('wR.floor', list(zip(self.x, self.instance.c1)) + [(self.eta, 1.0)], '>=', value)

    def cut_block(self, record, prefix):
        return build_OU_point(self.handle, self.instance, record.u_d, record.dual, self.bigm, self.x, prefix)

    def add_record(self, record):
        inst, rec = self.instance, self.instance.recourse
        prefix = f"cut{len(self.blocks)}"
        block = self.cut_block(record, f"{prefix}.ou")
        yc = self.handle.add_vars(f"{prefix}.yc", rec.n_y)
        yd = []
        if self.integer_y_d and rec.m_y:
            yd = [self.handle.add_var(f"{prefix}.yd[{j}]", 'int', lo, hi) for j, (lo, hi) in enumerate(rec.y_d_bounds)]
        m_ind = self.bigm.get('indicator')
        theta = block.theta

        guard = [(theta, m_ind)] if theta else []
        terms = [(self.eta, 1.0)] + guard
        terms += [(v, -c) for v, c in zip(yc, rec.c2c)] + [(v, -c) for v, c in zip(yd, rec.c2d)]
        self.handle.add_row(f"{prefix}.eta", terms, '>=', 0.0)
        rhs = rec.d - (rec.E_d @ record.u_d if inst.ddu.m_u else 0.0)
        blocks = [(rec.B2c, yc), (rec.E_c, block.u_c), (rec.B1, self.x)]
        if theta:
            blocks.append((np.full((rec.mu_y, 1), m_ind), [theta]))
        if yd:
            blocks.append((rec.B2d, yd))
        self.handle.add_matrix_rows(f"{prefix}.Y", blocks, '>=', rhs)
        if not self.blocks:
            # the recourse copy bounds eta from now on
            self.handle.remove_row('eta.floor')
        self.blocks.append(block)
        return block

    def solve(self, time_limit=None):
        return self.handle.solve(time_limit=time_limit)

    def x_value(self, outcome):
        x = outcome.values(self.x)
        n_x = self.instance.first_stage.n_x
        x[n_x:] = np.round(x[n_x:])
        return x


def build_master_miu(instance, ledger, bigm, backend, integer_y_d=False):
    master = MasterMIU(instance, bigm, backend, integer_y_d)
    for record in ledger:
        master.add_record(record)
    return master


def solve_sp1(instance, x_star, backend, bigm, time_limit=None):
    """eta_f(x*) = max over U(x*) of min 1^T y_tilde; a single MILP through the recourse KKT."""
    started = time.perf_counter()
    handle = backend.model('sp1', sense='max')
    uc, ud = add_uncertainty(handle, instance, x_star)
    block = kkt_of_recourse_lp(handle, instance, 'sp1', bigm, x_star, uc, ud, objective='slack', slack='vector')
    handle.set_objective(block.value_terms)
    outcome = handle.solve(time_limit=time_limit)
    if outcome.status == 'infeasible':
        return SubproblemResult('u-empty', wall_time=time.perf_counter() - started)
    if not outcome.optimal:
        return SubproblemResult(outcome.status, wall_time=time.perf_counter() - started)
    scenario = Scenario(outcome.values(uc), outcome.values(ud))
    exact = slack_recourse(instance, x_star, scenario, backend)
    value = exact.value if exact.optimal else outcome.objective
    return SubproblemResult('optimal', max(0.0, value), scenario, wall_time=time.perf_counter() - started)


def solve_sp2(instance, x_star, backend, bigm, time_limit=None, tol=1e-6):
    """eta_o(x*) with the worst-case scenario and an optimal recourse dual there."""
    started = time.perf_counter()
    handle = backend.model('sp2', sense='max')
    uc, ud = add_uncertainty(handle, instance, x_star)
    block = kkt_of_recourse_lp(handle, instance, 'sp2', bigm, x_star, uc, ud, objective='cost',
                               slack='vector', weight=bigm.get('penalty'))
    handle.set_objective(block.value_terms, block.constant)
    outcome = handle.solve(time_limit=time_limit)
    if outcome.status == 'infeasible':
        return SubproblemResult('u-empty', wall_time=time.perf_counter() - started)
    if not outcome.optimal:
        return SubproblemResult(outcome.status, wall_time=time.perf_counter() - started)
    scenario = Scenario(outcome.values(uc), outcome.values(ud))
    solution = recourse_lp(instance, x_star, scenario, backend, tol=tol)
    if not solution.optimal:
        raise BackendError(f"recourse LP {solution.status} at the SP2 scenario although eta_f = 0; "
                           "feasibility tolerance and big-M disagree")
    return SubproblemResult('optimal', solution.value, scenario, solution.pi, time.perf_counter() - started,
                            {'penalized': outcome.objective})


def solve_sp3(instance, x_star, u_f, backend, tol=1e-6):
    started = time.perf_counter()
    residual = recourse_residual(instance, x_star, u_f)
    ray = extreme_ray_of_Pi(instance.recourse, residual, backend, tol)
    return SubproblemResult('optimal', ray.value, u_f, ray.gamma, time.perf_counter() - started)


def seed_from_wr(instance, backend, report, time_limit=None):
    """Solve the monolithic relaxation; returns (w_R result, seed scenario) or None if infeasible."""
    bound = relaxation_bound_wR(instance, backend, time_limit=time_limit)
    report.add_time('wR', bound.wall_time)
    if bound.status == 'unbounded':
        raise InstanceError("relaxation bound is unbounded: the instance violates A3")
    if bound.status != 'optimal':
        return bound
    report.w_R = bound.value
    report.ledger.update_lb(bound.value)
    return bound


@ccg_miu_bp.algorithm('miu')
def run_ccg_miu(instance, config, backend=None, trace=None):
    backend = backend or config.backend()
    trace = trace or TraceWriter()
    bigm = config.bigm()
    if instance.recourse.m_y:
        raise InstanceError("parametric C&CG-MIU needs LP recourse (m_y = 0); use nested, extended or approx")

    report = SolveReport('miu', 'limit', instance_name=instance.name)
    ledger = report.ledger
    cuts = CutLedger(config.tol_feas)
    master = MasterMIU(instance, bigm, backend)

    def remaining():
        return max(1.0, config.time_limit - ledger.elapsed())

    if config.init_strategy == 'wr':
        bound = seed_from_wr(instance, backend, report, remaining())
        if bound.status == 'infeasible':
            return finish_report(report, cuts, instance, 'infeasible', 'wr_infeasible', 0)
        if bound.status != 'optimal':
            return finish_report(report, cuts, instance, 'limit', 'time_limit', 0)
        master.add_floor(bound.value)
        seed = recourse_lp(instance, bound.x, bound.scenario, backend, tol=config.tol_feas)
        if seed.optimal:
            record = CutRecordMIU(bound.scenario.u_d, seed.pi, 'init', 0)
            cuts.add(record)
            master.add_record(record)

    history = []
    t = 0
    while True:
        t += 1
        times = {}
        outcome = master.solve(remaining())
        times['master'] = outcome.wall_time
        if outcome.status == 'infeasible':
            return finish_report(report, cuts, instance, 'infeasible', 'master_infeasible', t)
        if not outcome.optimal:
            return finish_report(report, cuts, instance, 'limit', 'time_limit', t)
        ledger.update_lb(outcome.bound if outcome.bound is not None else outcome.objective)
        x_star = master.x_value(outcome)

        if config.gap_closed(ledger.lb, ledger.ub):
            return finish_report(report, cuts, instance, 'optimal', 'gap', t)
        if any(vectors_close(x_star, x) for x in history):
            return finish_report(report, cuts, instance, 'optimal', 'repeated_x', t)
        history.append(x_star)

        sp1 = solve_sp1(instance, x_star, backend, bigm, remaining())
        times['sp1'] = sp1.wall_time
        if sp1.status == 'u-empty':
            report.x = x_star
            report.diagnostics.append(f"U(x*) is empty at iteration {t}")
            return finish_report(report, cuts, instance, 'u-empty', 'u_empty', t)
        if sp1.status != 'optimal':
            return finish_report(report, cuts, instance, 'limit', 'time_limit', t)

        eta_o = None
        if sp1.value > config.tol_feas:
            sp3 = solve_sp3(instance, x_star, sp1.scenario, backend, config.tol_feas)
            times['sp3'] = sp3.wall_time
            record = CutRecordMIU(sp1.scenario.u_d, sp3.dual, 'feasibility', t)
        else:
            sp2 = solve_sp2(instance, x_star, backend, bigm, remaining(), config.tol_feas)
            times['sp2'] = sp2.wall_time
            if sp2.status != 'optimal':
                return finish_report(report, cuts, instance, 'limit', 'time_limit', t)
            logger.debug("SP2 %s", sp2.as_dict())
            eta_o = sp2.value
            if ledger.update_ub(float(instance.c1 @ x_star) + eta_o):
                report.x = x_star
            record = CutRecordMIU(sp2.scenario.u_d, sp2.dual, 'optimality', t)
        for key, value in times.items():
            report.add_time(key, value)

        trace.write(ledger.append(t, cut_kind=record.origin, u_d=record.u_d.tolist(), eta_f=sp1.value,
                                  eta_o=eta_o, subproblem_times=times))
        logger.info("miu t=%d LB=%.6g UB=%.6g gap=%.3g cut=%s", t, ledger.lb, ledger.ub, ledger.gap, record.origin)

        if config.gap_closed(ledger.lb, ledger.ub):
            return finish_report(report, cuts, instance, 'optimal', 'gap', t)
        if not cuts.add(record):
            report.diagnostics.append(f"repeated {record.origin} cutting set at iteration {t}")
            status = 'limit' if record.is_feasibility else 'optimal'
            return finish_report(report, cuts, instance, status, 'repeated_cut', t)
        master.add_record(record)

        if t >= config.max_iterations:
            return finish_report(report, cuts, instance, 'limit', 'iter_limit', t)
        if ledger.elapsed() >= config.time_limit:
            return finish_report(report, cuts, instance, 'limit', 'time_limit', t)


def finish_report(report, cuts, instance, status, stop_reason, iterations):
    ledger = report.ledger
    report.status = status
    report.stop_reason = stop_reason
    report.iterations = iterations
    report.lower_bound = ledger.lb
    report.upper_bound = ledger.ub
    report.cuts = list(cuts.entries)
    report.complexity = iteration_cap_check(count_u_d(instance), cuts.distinct_duals(), iterations)
    report.timings['total'] = ledger.elapsed()
    report.diagnostics.extend(ledger.violations())
    logger.info("%s finished: %s (%s) LB=%.6g UB=%.6g", report.algorithm, status, stop_reason, ledger.lb, ledger.ub)
    return report
