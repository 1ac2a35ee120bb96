import logging
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import general_bp
from .schemas import mixed_cut_record_schema
from ddu_ro.blueprints.ccg_miu.procedures import CutRecordMIU, MasterMIU, SubproblemResult, finish_report, seed_from_wr
from ddu_ro.blueprints.nested.procedures import YdPiSet, run_nested_engine
from ddu_ro.models import Scenario
from ddu_ro.reformulate import (add_uncertainty, kkt_of_recourse_lp, recourse_lp, recourse_mip,
                                relaxed_recourse_lp)
from ddu_ro.utils.ledger import CutLedger, SolveReport, TraceWriter, vectors_close

logger = logging.getLogger(__name__)


@dataclass
class MixedCutRecord:
    u_d: np.ndarray
    pairs: YdPiSet
    origin: str
    iteration: int

    @property
    def is_feasibility(self):
        return self.origin == 'isf'

    def pair_list(self):
        return self.pairs.pair_list()

    def same_as(self, other, tol=1e-6):
        return vectors_close(self.u_d, other.u_d, tol) and self.pairs.same_as(other.pairs, tol)

    def dual_vectors(self):
        return self.pairs.dual_vectors()

    def as_dict(self):
        return mixed_cut_record_schema.dump(self)


@general_bp.algorithm('extended')
def run_extended_nested(instance, config, backend=None, trace=None):
    return run_nested_engine(instance, config, backend or config.backend(), trace or TraceWriter(), 'extended',
                             lambda u_d, pairs, origin, t: MixedCutRecord(np.asarray(u_d, dtype=float),
                                                                         YdPiSet(pairs, origin, t), origin, t))


# approximation variant


@dataclass
class ApproxReport(SolveReport):
    rc_probe: Optional[float] = None


def rc_probe(instance, x_star, backend, bigm, time_limit=None):
    """max over U(x*) of the least slack the LP-relaxed recourse needs; > 0 means RC fails at x*."""
    handle = backend.model('rc_probe', sense='max')
    uc, ud = add_uncertainty(handle, instance, x_star)
    block = kkt_of_recourse_lp(handle, instance, 'probe', bigm, x_star, uc, ud, objective='slack',
                               slack='vector', relax_y_d=True)
    handle.set_objective(block.value_terms, block.constant)
    outcome = handle.solve(time_limit=time_limit)
    if outcome.status == 'infeasible':
        return SubproblemResult('u-empty')
    if not outcome.optimal:
        return SubproblemResult(outcome.status)
    return SubproblemResult('optimal', max(0.0, outcome.objective), Scenario(outcome.values(uc), outcome.values(ud)))


def solve_sp2_relaxed(instance, x_star, backend, bigm, time_limit=None):
    """Worst case of the LP-relaxed recourse over the mixed-integer U(x*)."""
    started = time.perf_counter()
    handle = backend.model('sp2_relaxed', sense='max')
    uc, ud = add_uncertainty(handle, instance, x_star)
    block = kkt_of_recourse_lp(handle, instance, 'sp2r', bigm, x_star, uc, ud, objective='cost',
                               slack='vector', weight=bigm.get('penalty'), relax_y_d=True)
    handle.set_objective(block.value_terms, block.constant)
    outcome = handle.solve(time_limit=time_limit)
    if not outcome.optimal:
        return SubproblemResult('u-empty' if outcome.status == 'infeasible' else outcome.status)
    scenario = Scenario(outcome.values(uc), outcome.values(ud))
    relaxed = relaxed_recourse_lp(instance, x_star, scenario, backend)
    if not relaxed.optimal:
        return SubproblemResult('rc-violated', scenario=scenario, wall_time=time.perf_counter() - started)
    return SubproblemResult('optimal', relaxed.value, scenario, relaxed.pi, time.perf_counter() - started)


def solve_sp4(instance, x_star, y_d_star, backend, bigm, time_limit=None, tol=1e-6):
    """eta_tilde(x*, y_d*) = max over U(x*) of min over y_c with y_d fixed; never below eta_o(x*)."""
    started = time.perf_counter()
    handle = backend.model('sp4', sense='max')
    uc, ud = add_uncertainty(handle, instance, x_star)
    block = kkt_of_recourse_lp(handle, instance, 'sp4', bigm, x_star, uc, ud, fix_y_d=y_d_star, objective='cost',
                               slack='vector', weight=bigm.get('penalty'))
    handle.set_objective(block.value_terms, block.constant)
    outcome = handle.solve(time_limit=time_limit)
    if not outcome.optimal:
        return SubproblemResult('u-empty' if outcome.status == 'infeasible' else outcome.status)
    scenario = Scenario(outcome.values(uc), outcome.values(ud))
    exact = recourse_lp(instance, x_star, scenario, backend, y_d=y_d_star, tol=tol)
    if not exact.optimal:
        return SubproblemResult('rc-violated', scenario=scenario, wall_time=time.perf_counter() - started,
                                extra={'penalized': outcome.objective})
    return SubproblemResult('optimal', exact.value, scenario, exact.pi, time.perf_counter() - started,
                            {'penalized': outcome.objective})


@general_bp.algorithm('approx')
def run_approx_miu(instance, config, backend=None, trace=None):
    backend = backend or config.backend()
    trace = trace or TraceWriter()
    bigm = config.bigm()
    report = ApproxReport('approx', 'limit', instance_name=instance.name)
    ledger = report.ledger
    cuts = CutLedger(config.tol_feas)
    master = MasterMIU(instance, bigm, backend, integer_y_d=True)

    def remaining():
        return max(1.0, config.time_limit - ledger.elapsed())

    if config.init_strategy == 'wr':
        bound = seed_from_wr(instance, backend, report, remaining())
        if bound.status == 'infeasible':
            return finish_report(report, cuts, instance, 'infeasible', 'wr_infeasible', 0)
        if bound.status != 'optimal':
            return finish_report(report, cuts, instance, 'limit', 'time_limit', 0)
        master.add_floor(bound.value)
        seed = relaxed_recourse_lp(instance, bound.x, bound.scenario, backend)
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
            return finish_report(report, cuts, instance, 'gap-stop', 'repeated_x', t)
        history.append(x_star)

        probe = rc_probe(instance, x_star, backend, bigm, remaining())
        if probe.status == 'u-empty':
            report.x = x_star
            return finish_report(report, cuts, instance, 'u-empty', 'u_empty', t)
        if probe.status != 'optimal':
            return finish_report(report, cuts, instance, 'limit', 'time_limit', t)
        report.rc_probe = max(report.rc_probe or 0.0, probe.value)
        if probe.value > config.tol_feas:
            report.x = x_star
            report.diagnostics.append(f"relatively complete recourse fails at iteration {t}: "
                                      f"relaxed slack {probe.value:.6g} at u_d={probe.scenario.u_d.tolist()}")
            return finish_report(report, cuts, instance, 'rc-violated', 'rc_probe', t)

        sp2 = solve_sp2_relaxed(instance, x_star, backend, bigm, remaining())
        times['sp2'] = sp2.wall_time
        if sp2.status == 'rc-violated':
            report.diagnostics.append(f"relaxed recourse infeasible at the SP2 scenario, iteration {t}")
            return finish_report(report, cuts, instance, 'rc-violated', 'rc_probe', t)
        if sp2.status != 'optimal':
            return finish_report(report, cuts, instance, 'limit', 'time_limit', t)
        exact = recourse_mip(instance, x_star, sp2.scenario, backend)
        if not exact.optimal:
            report.diagnostics.append(f"MIP recourse {exact.status} at the SP2 scenario, iteration {t}")
            return finish_report(report, cuts, instance, 'rc-violated', 'rc_probe', t)

        sp4 = solve_sp4(instance, x_star, exact.y_d, backend, bigm, remaining(), config.tol_feas)
        times['sp4'] = sp4.wall_time
        eta_tilde = None
        if sp4.status == 'optimal':
            eta_tilde = sp4.value
            if ledger.update_ub(float(instance.c1 @ x_star) + eta_tilde):
                report.x = x_star
        else:
            report.diagnostics.append(f"SP4 {sp4.status} with y_d*={exact.y_d.tolist()} at iteration {t}; "
                                      "UB not updated")
        for key, value in times.items():
            report.add_time(key, value)

        record = CutRecordMIU(sp2.scenario.u_d, sp2.dual, 'optimality', t)
        trace.write(ledger.append(t, cut_kind=record.origin, u_d=record.u_d.tolist(), eta_f=probe.value,
                                  eta_o=eta_tilde, subproblem_times=times,
                                  extra={'relaxed_value': sp2.value, 'y_d_star': exact.y_d.tolist()}))
        logger.info("approx t=%d LB=%.6g UB=%.6g gap=%.3g", t, ledger.lb, ledger.ub, ledger.gap)

        if config.gap_closed(ledger.lb, ledger.ub):
            return finish_report(report, cuts, instance, 'optimal', 'gap', t)
        if not cuts.add(record):
            return finish_report(report, cuts, instance, 'gap-stop', 'repeated_cut', t)
        master.add_record(record)

        if t >= config.max_iterations:
            return finish_report(report, cuts, instance, 'limit', 'iter_limit', t)
        if ledger.elapsed() >= config.time_limit:
            return finish_report(report, cuts, instance, 'limit', 'time_limit', t)
