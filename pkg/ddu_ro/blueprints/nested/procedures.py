"""Nested parametric C&CG for MIP recourse.

The outer loop mirrors C&CG-MIU; x* is checked by two inner C&CG
subroutines over Y_d (ISF for feasibility, ISO for optimality). Each inner
subroutine runs a Phase I that grows Y_d_hat and a Phase II that repairs the
(y_d, pi) set through a correction problem until it captures the worst case.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import nested_bp
from .schemas import inner_state_schema, yd_pi_set_schema
from ddu_ro.blueprints.ccg_miu.procedures import MasterMIU, finish_report, seed_from_wr
from ddu_ro.errors import BackendError, InstanceError
from ddu_ro.models import Scenario
from ddu_ro.reformulate import (add_uncertainty, build_OU_mixed, kkt_of_recourse_lp, normalized_dual, penalized_dual,
                                recourse_lp, recourse_mip, recourse_residual, slack_recourse)
from ddu_ro.utils.ledger import CutLedger, SolveReport, TraceWriter, vectors_close

logger = logging.getLogger(__name__)


def _pairs_match(a, b, tol):
    if len(a) != len(b):
        return False
    unused = list(b)
    for y_d, pi in a:
        hit = next((k for k, (y2, p2) in enumerate(unused)
                    if vectors_close(y_d, y2, tol) and vectors_close(pi, p2, tol)), None)
        if hit is None:
            return False
        unused.pop(hit)
    return True


@dataclass
class YdPiSet:
    pairs: list
    origin: str
    iteration: int

    @property
    def u_d(self):
        return np.zeros(0)

    @property
    def is_feasibility(self):
        return self.origin == 'isf'

    def pair_list(self):
        return list(self.pairs)

    def same_as(self, other, tol=1e-6):
        return self.is_feasibility == other.is_feasibility and _pairs_match(self.pairs, other.pair_list(), tol)

    def dual_vectors(self):
        return [pi for _, pi in self.pairs]

    def as_dict(self):
        return yd_pi_set_schema.dump(self)


@dataclass
class InnerState:
    yd: List[np.ndarray]
    lb: float = -math.inf
    ub: float = math.inf
    phase: str = 'I'
    iterations: int = 0
    # how phase II ended: correction (c <= tol reached) or repeat (known y_d returned)
    closed_on: Optional[str] = None

    def knows(self, y_d):
        return any(vectors_close(y_d, seen) for seen in self.yd)

    def as_dict(self):
        return inner_state_schema.dump(self)


@dataclass
class InnerMasterResult:
    status: str
    value: Optional[float] = None
    scenario: Optional[Scenario] = None
    pis: List[np.ndarray] = field(default_factory=list)


@dataclass
class CorrectionResult:
    status: str
    value: Optional[float] = None
    y_d: Optional[np.ndarray] = None
    scenario: Optional[Scenario] = None
    pi: Optional[np.ndarray] = None


@dataclass
class InnerResult:
    status: str
    value: float = 0.0
    pairs: Optional[list] = None
    scenario: Optional[Scenario] = None
    state: Optional[InnerState] = None


def y_d_count(instance):
    return int(np.prod([hi - lo + 1 for lo, hi in instance.recourse.y_d_bounds])) if instance.recourse.m_y else 1


def naive_y_d(instance):
    return np.array(instance.recourse.y_d_bounds[:, 1], dtype=float)


def _add_recourse_vars(handle, instance, prefix):
    rec = instance.recourse
    yc = handle.add_vars(f"{prefix}.yc", rec.n_y)
    yd = [handle.add_var(f"{prefix}.yd[{j}]", 'int', lo, hi) for j, (lo, hi) in enumerate(rec.y_d_bounds)]
    return yc, yd


# ISF


def inner_sp_f(instance, x_star, scenario, backend, vector=False):
    """r_f = min slack over the slack-extended recourse with integer y_d."""
    solution = slack_recourse(instance, x_star, scenario, backend, vector=vector)
    if not solution.optimal:
        raise BackendError(f"ISP_f ended with status {solution.status}; the slack system is always feasible")
    return solution


def inner_mp_f(instance, x_star, Yd_hat, backend, bigm, vector=False, time_limit=None):
    """max over U(x*) of min over Y_d_hat of the slack LP; pis re-solved at the maximizer."""
    handle = backend.model('imp_f', sense='max')
    uc, ud = add_uncertainty(handle, instance, x_star)
    eta = handle.add_var('eta', 'free')
    for t, y_d in enumerate(Yd_hat):
        block = kkt_of_recourse_lp(handle, instance, f"t{t}", bigm, x_star, uc, ud, fix_y_d=y_d,
                                   objective='slack', slack='vector' if vector else 'scalar')
        handle.add_row(f"t{t}.value", [(eta, 1.0)] + [(v, -c) for v, c in block.value_terms], '<=', block.constant)
    handle.set_objective([(eta, 1.0)])
    outcome = handle.solve(time_limit=time_limit)
    if outcome.status == 'infeasible':
        return InnerMasterResult('u-empty')
    if not outcome.optimal:
        return InnerMasterResult(outcome.status)

    scenario = Scenario(outcome.values(uc), outcome.values(ud))
    values, pis = [], []
    for y_d in Yd_hat:
        value, pi = normalized_dual(instance, recourse_residual(instance, x_star, scenario, y_d), backend, vector)
        values.append(value)
        pis.append(pi)
    return InnerMasterResult('optimal', max(0.0, min(values)), scenario, pis)


def icp_f(instance, x_star, u_d, pairs, backend, bigm, vector=False, time_limit=None):
    """min slack over Y(x*, u) with (u, .) in OU(x*, u_d, pairs); c_f = 0 exposes a missing y_d."""
    rec = instance.recourse
    handle = backend.model('icp_f', sense='min')
    block = build_OU_mixed(handle, instance, u_d, pairs, bigm, x_star, 'ou', kind='feasibility')
    yc, yd = _add_recourse_vars(handle, instance, 'icp')
    yt = handle.add_vars('icp.yt', rec.mu_y if vector else 1)
    slack = np.eye(rec.mu_y) if vector else np.ones((rec.mu_y, 1))
    rhs = rec.d - rec.B1 @ x_star - (rec.E_d @ u_d if instance.ddu.m_u else 0.0)
    handle.add_matrix_rows('icp.Y', [(rec.B2c, yc), (rec.B2d, yd), (slack, yt), (rec.E_c, block.u_c)], '>=', rhs)
    handle.set_objective([(v, 1.0) for v in yt])
    outcome = handle.solve(time_limit=time_limit)
    if not outcome.optimal:
        return CorrectionResult(outcome.status)
    y_d = np.round(outcome.values(yd))
    scenario = Scenario(outcome.values(block.u_c), u_d)
    # dual ray at the correction point
    _, pi = normalized_dual(instance, recourse_residual(instance, x_star, scenario, y_d), backend, vector)
    return CorrectionResult('optimal', max(0.0, outcome.objective), y_d, scenario, pi)


def run_isf(instance, x_star, config, backend, bigm, init=None, remaining=lambda: None):
    tol = config.tol_feas
    vector = config.vector_slack
    state = InnerState([np.asarray(y, dtype=float) for y in init] if init else [naive_y_d(instance)])

    r_f = 0.0
    while True:
        state.iterations += 1
        imp = inner_mp_f(instance, x_star, state.yd, backend, bigm, vector, remaining())
        if imp.status != 'optimal':
            return InnerResult(imp.status, state=state)
        if imp.value <= tol:
            logger.debug("ISF phase I closed: eta_f_hat=%.3g with |Yd|=%d", imp.value, len(state.yd))
            return InnerResult('optimal', 0.0, state=state)
        sp = inner_sp_f(instance, x_star, imp.scenario, backend, vector)
        logger.debug("ISF phase I k=%d eta_f_hat=%.6g r_f=%.6g", state.iterations, imp.value, sp.value)
        if sp.value > tol:
            r_f = sp.value
            break
        if state.knows(sp.y_d):
            logger.warning("ISF returned a known y_d %s; treating phase I as closed", sp.y_d.tolist())
            return InnerResult('optimal', 0.0, state=state)
        state.yd.append(sp.y_d)
        if state.iterations >= config.max_inner_iterations:
            return InnerResult('limit', state=state)

    u_star = imp.scenario
    pairs = list(zip(state.yd, imp.pis))
    state.phase = 'II'
    while True:
        state.iterations += 1
        icp = icp_f(instance, x_star, u_star.u_d, pairs, backend, bigm, vector, remaining())
        if icp.status != 'optimal':
            return InnerResult(icp.status, state=state)
        logger.debug("ISF phase II c_f=%.6g with %d pairs", icp.value, len(pairs))
        if icp.value > tol:
            state.closed_on = 'correction'
            break
        if state.knows(icp.y_d):
            logger.warning("ICP_f returned a known y_d %s; keeping the current pairs", icp.y_d.tolist())
            state.closed_on = 'repeat'
            break
        state.yd.append(icp.y_d)
        pairs.append((icp.y_d, icp.pi))
        if state.iterations >= config.max_inner_iterations:
            return InnerResult('limit', state=state)

    if config.prune_pairs and len(pairs) > 1:
        pairs = prune_pairs(pairs, icp.value, tol, lambda p: icp_f(instance, x_star, u_star.u_d, p, backend, bigm,
                                                                    vector, remaining()).value)
    return InnerResult('optimal', r_f, pairs, u_star, state)


# ISO


def inner_sp_o(instance, x_star, scenario, backend):
    solution = recourse_mip(instance, x_star, scenario, backend)
    if not solution.optimal:
        raise BackendError(f"ISP_o ended with status {solution.status} after ISF reported feasibility")
    return solution


def inner_mp_o(instance, x_star, Yd_hat, backend, bigm, time_limit=None):
    """max over U(x*) of min over Y_d_hat of the penalized recourse LP; an inner upper bound."""
    handle = backend.model('imp_o', sense='max')
    uc, ud = add_uncertainty(handle, instance, x_star)
    eta = handle.add_var('eta', 'free')
    for t, y_d in enumerate(Yd_hat):
        block = kkt_of_recourse_lp(handle, instance, f"t{t}", bigm, x_star, uc, ud, fix_y_d=y_d,
                                   objective='cost', slack='vector', weight=bigm.get('penalty'))
        handle.add_row(f"t{t}.value", [(eta, 1.0)] + [(v, -c) for v, c in block.value_terms], '<=', block.constant)
    handle.set_objective([(eta, 1.0)])
    outcome = handle.solve(time_limit=time_limit)
    if outcome.status == 'infeasible':
        return InnerMasterResult('u-empty')
    if not outcome.optimal:
        return InnerMasterResult(outcome.status)
    return InnerMasterResult('optimal', outcome.objective, Scenario(outcome.values(uc), outcome.values(ud)))


def icp_o(instance, x_star, u_d, pairs, backend, bigm, time_limit=None):
    """min recourse cost over Y(x*, u) with (u, .) in OU(x*, u_d, pairs)."""
    rec = instance.recourse
    handle = backend.model('icp_o', sense='min')
    block = build_OU_mixed(handle, instance, u_d, pairs, bigm, x_star, 'ou', kind='optimality')
    yc, yd = _add_recourse_vars(handle, instance, 'icp')
    rhs = rec.d - rec.B1 @ x_star - (rec.E_d @ u_d if instance.ddu.m_u else 0.0)
    handle.add_matrix_rows('icp.Y', [(rec.B2c, yc), (rec.B2d, yd), (rec.E_c, block.u_c)], '>=', rhs)
    handle.set_objective(list(zip(yc, rec.c2c)) + list(zip(yd, rec.c2d)))
    outcome = handle.solve(time_limit=time_limit)
    if not outcome.optimal:
        return CorrectionResult(outcome.status)
    return CorrectionResult('optimal', outcome.objective, np.round(outcome.values(yd)),
                            Scenario(outcome.values(block.u_c), u_d))


def run_iso(instance, x_star, config, backend, bigm, init=None, remaining=lambda: None):
    tol = config.tol_feas
    state = InnerState([np.asarray(y, dtype=float) for y in init] if init else [naive_y_d(instance)])

    while True:
        state.iterations += 1
        imp = inner_mp_o(instance, x_star, state.yd, backend, bigm, remaining())
        if imp.status != 'optimal':
            return InnerResult(imp.status, state=state)
        state.ub = min(state.ub, imp.value)
        sp = inner_sp_o(instance, x_star, imp.scenario, backend)
        state.lb = max(state.lb, sp.value)
        logger.debug("ISO phase I k=%d LB=%.6g UB=%.6g", state.iterations, state.lb, state.ub)
        if config.gap_closed(state.lb, state.ub):
            break
        if state.knows(sp.y_d):
            logger.warning("ISO returned a known y_d %s before the inner gap closed", sp.y_d.tolist())
            break
        state.yd.append(sp.y_d)
        if state.iterations >= config.max_inner_iterations:
            return InnerResult('limit', state=state)

    u_star = imp.scenario
    weight = bigm.get('penalty')
    pairs = [(y_d, penalized_dual(instance, recourse_residual(instance, x_star, u_star, y_d), backend, weight)[1])
             for y_d in state.yd]
    state.phase = 'II'
    while True:
        state.iterations += 1
        icp = icp_o(instance, x_star, u_star.u_d, pairs, backend, bigm, remaining())
        if icp.status != 'optimal':
            return InnerResult(icp.status, state=state)
        logger.debug("ISO phase II c_o=%.6g LB=%.6g with %d pairs", icp.value, state.lb, len(pairs))
        if icp.value >= state.lb - tol:
            state.closed_on = 'correction'
            break
        if state.knows(icp.y_d):
            logger.warning("ICP_o returned a known y_d %s; keeping the current pairs", icp.y_d.tolist())
            state.closed_on = 'repeat'
            break
        solution = recourse_lp(instance, x_star, icp.scenario, backend, y_d=icp.y_d, tol=tol)
        if not solution.optimal:
            raise BackendError(f"recourse LP {solution.status} at the ICP_o point with its own y_d")
        state.yd.append(icp.y_d)
        pairs.append((icp.y_d, solution.pi))
        if state.iterations >= config.max_inner_iterations:
            return InnerResult('limit', state=state)

    if config.prune_pairs and len(pairs) > 1:
        pairs = prune_pairs(pairs, icp.value, tol, lambda p: icp_o(instance, x_star, u_star.u_d, p, backend, bigm,
                                                                    remaining()).value)
    return InnerResult('optimal', state.ub, pairs, u_star, state)


def prune_pairs(pairs, reference, tol, evaluate):
    """Drop pairs whose removal leaves the correction value unchanged."""
    kept = list(pairs)
    k = 0
    while k < len(kept) and len(kept) > 1:
        trial = kept[:k] + kept[k + 1:]
        value = evaluate(trial)
        if value is not None and abs(value - reference) <= tol * max(1.0, abs(reference)):
            logger.debug("pruned pair with y_d %s", np.asarray(kept[k][0]).tolist())
            kept = trial
        else:
            k += 1
    return kept


# outer procedure


class OuterMaster(MasterMIU):
    """OMP: one OU block over (u_d, {(y_d, pi)}) plus replicated (y_c, y_d) per cutting set."""

    def __init__(self, instance, bigm, backend):
        super().__init__(instance, bigm, backend, integer_y_d=True)

    def cut_block(self, record, prefix):
        kind = 'feasibility' if record.is_feasibility else 'optimality'
        return build_OU_mixed(self.handle, self.instance, record.u_d, record.pair_list(), self.bigm, self.x,
                              prefix, kind)


def build_omp(instance, ledger, bigm, backend):
    master = OuterMaster(instance, bigm, backend)
    for record in ledger:
        master.add_record(record)
    return master


def run_nested_engine(instance, config, backend, trace, algorithm, make_record):
    bigm = config.bigm()
    report = SolveReport(algorithm, 'limit', instance_name=instance.name)
    ledger = report.ledger
    cuts = CutLedger(config.tol_feas)
    master = OuterMaster(instance, bigm, backend)
    n_yd = y_d_count(instance)

    def remaining():
        return max(1.0, config.time_limit - ledger.elapsed())

    if config.init_strategy == 'wr':
        bound = seed_from_wr(instance, backend, report, remaining())
        if bound.status == 'infeasible':
            return finish_report(report, cuts, instance, 'infeasible', 'wr_infeasible', 0)
        if bound.status != 'optimal':
            return finish_report(report, cuts, instance, 'limit', 'time_limit', 0)
        master.add_floor(bound.value)

    history = []
    inherited = None
    t = 0
    while True:
        t += 1
        outcome = master.solve(remaining())
        report.add_time('master', outcome.wall_time)
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

        init = inherited if config.isf_init == 'inheritance' else None
        isf = run_isf(instance, x_star, config, backend, bigm, init, remaining)
        report.inner_iterations += isf.state.iterations
        _check_inner_cap(report, 'isf', isf.state, n_yd, t)
        if isf.status == 'u-empty':
            report.x = x_star
            report.diagnostics.append(f"U(x*) is empty at outer iteration {t}")
            return finish_report(report, cuts, instance, 'u-empty', 'u_empty', t)
        if isf.status != 'optimal':
            return finish_report(report, cuts, instance, 'limit', 'inner_limit', t)
        inherited = isf.state.yd

        eta_o = None
        if isf.value > config.tol_feas:
            inner, origin = isf, 'isf'
        else:
            inner = run_iso(instance, x_star, config, backend, bigm, isf.state.yd, remaining)
            report.inner_iterations += inner.state.iterations
            _check_inner_cap(report, 'iso', inner.state, n_yd, t)
            if inner.status != 'optimal':
                return finish_report(report, cuts, instance, 'limit', 'inner_limit', t)
            origin = 'iso'
            eta_o = inner.value
            if ledger.update_ub(float(instance.c1 @ x_star) + eta_o):
                report.x = x_star
        record = make_record(inner.scenario.u_d, inner.pairs, origin, t)

        trace.write(ledger.append(t, cut_kind='feasibility' if origin == 'isf' else 'optimality',
                                  u_d=inner.scenario.u_d.tolist(), eta_f=isf.value, eta_o=eta_o,
                                  extra={'outer_t': t, 'inner_subroutine': origin,
                                         'inner_t': inner.state.iterations, 'phase': inner.state.phase,
                                         'closed_on': inner.state.closed_on, 'n_yd': len(inner.state.yd)}))
        logger.info("%s t=%d LB=%.6g UB=%.6g gap=%.3g cut=%s |pairs|=%d", algorithm, t, ledger.lb, ledger.ub,
                    ledger.gap, origin, len(inner.pairs))

        if config.gap_closed(ledger.lb, ledger.ub):
            return finish_report(report, cuts, instance, 'optimal', 'gap', t)
        if not cuts.add(record):
            report.diagnostics.append(f"repeated {origin} cutting set at outer iteration {t}")
            status = 'limit' if origin == 'isf' else 'optimal'
            return finish_report(report, cuts, instance, status, 'repeated_cut', t)
        master.add_record(record)

        if t >= config.max_iterations:
            return finish_report(report, cuts, instance, 'limit', 'iter_limit', t)
        if ledger.elapsed() >= config.time_limit:
            return finish_report(report, cuts, instance, 'limit', 'time_limit', t)


def _check_inner_cap(report, name, state, n_yd, t):
    if state.closed_on == 'repeat':
        report.diagnostics.append(f"{name} phase II stopped on a repeated y_d at t={t}")
    # each phase adds a new y_d per iteration, so |Y_d| + 1 bounds it
    if state.iterations > 2 * (n_yd + 1):
        report.diagnostics.append(f"{name} used {state.iterations} inner iterations at t={t} with |Y_d|={n_yd}")
    logger.debug("%s state at t=%d: %s", name, t, state.as_dict())


@nested_bp.algorithm('nested')
def run_nested(instance, config, backend=None, trace=None):
    if instance.ddu.m_u:
        raise InstanceError("nested C&CG needs a polytope DDU set (m_u = 0); use the extended variant")
    return run_nested_engine(instance, config, backend or config.backend(), trace or TraceWriter(), 'nested',
                             lambda u_d, pairs, origin, t: YdPiSet(pairs, origin, t))
