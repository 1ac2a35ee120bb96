"""Derived optimization models.

Every max-min structure is turned into a single-level MILP by writing the
inner LP's KKT conditions with big-M complementarity:

    inner LP   min q.z  s.t.  W z >= r0 + R v,  z >= 0 (or free)
    KKT        W^T lam <= q (== on free columns), lam >= 0,
               lam_i <= Md_i delta_i,        (W z - R v - r0)_i <= Mp (1 - delta_i),
               z_j <= Mp psi_j,              (q - W^T lam)_j <= Mr_j (1 - psi_j)

v are outer variables of the host model (x in masters, u in subproblems) or
plain numbers, in which case they fold into r0.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BackendError
from .utils.ledger import vectors_close
from .utils.milp import max_over_dual, solve_lp_with_duals

logger = logging.getLogger(__name__)


def _is_names(values):
    return len(values) > 0 and isinstance(values[0], str)


class InnerLP:
    def __init__(self, rows):
        self.rows = rows
        self.groups = []
        self.r0 = np.zeros(rows)
        self.outer = []
        self.dual_bound = np.full(rows, np.nan)

    def add_group(self, label, matrix, cost, kind='cont'):
        matrix = np.asarray(matrix, dtype=float).reshape(self.rows, -1)
        cost = np.broadcast_to(np.asarray(cost, dtype=float), (matrix.shape[1],)).copy()
        self.groups.append((label, matrix, cost, kind))

    def add_rhs(self, matrix, values):
        """r += matrix @ v, where v is a list of variable names or a numeric vector."""
        matrix = np.asarray(matrix, dtype=float).reshape(self.rows, -1)
        if matrix.shape[1] == 0:
            return
        if _is_names(values):
            self.outer.append((matrix, list(values)))
        else:
            self.r0 = self.r0 + matrix @ np.asarray(values, dtype=float)


@dataclass
class KKTBlock:
    prefix: str
    columns: Dict[str, List[str]]
    duals: List[str]
    row_binaries: List[str]
    column_binaries: List[str]
    objective: List[Tuple[str, float]]
    lp: Optional[InnerLP] = None

    def __getitem__(self, label):
        return self.columns[label]


def add_kkt(handle, prefix, lp, bigm):
    m = lp.rows
    mp = bigm.get('complementarity')
    md = np.where(np.isfinite(lp.dual_bound), lp.dual_bound, bigm.get('dual'))

    columns = {}
    cols = []
    for label, matrix, cost, kind in lp.groups:
        names = handle.add_vars(f"{prefix}.{label}", matrix.shape[1], kind)
        columns[label] = names
        cols.extend((name, matrix[:, j], cost[j], kind) for j, name in enumerate(names))

    lam = handle.add_vars(f"{prefix}.lam", m, 'cont')
    delta = handle.add_vars(f"{prefix}.delta", m, 'binary')
    for i in range(m):
        terms = [(name, col[i]) for name, col, _, _ in cols if col[i]]
        for matrix, names in lp.outer:
            terms += [(v, -matrix[i, k]) for k, v in enumerate(names) if matrix[i, k]]
        handle.add_row(f"{prefix}.p[{i}]", terms, '>=', lp.r0[i])
        handle.add_row(f"{prefix}.s[{i}]", terms + [(delta[i], mp)], '<=', lp.r0[i] + mp)
        handle.add_row(f"{prefix}.l[{i}]", [(lam[i], 1.0), (delta[i], -md[i])], '<=', 0.0)

    psi = []
    for name, col, cost, kind in cols:
        terms = [(lam[i], col[i]) for i in np.flatnonzero(col)]
        if kind == 'free':
            handle.add_row(f"{name}.dual", terms, '==', cost)
            continue
        handle.add_row(f"{name}.dual", terms, '<=', cost)
        flag = handle.add_var(f"{name}.psi", 'binary')
        mr = abs(cost) + float(np.abs(col) @ md)
        handle.add_row(f"{name}.on", [(name, 1.0), (flag, -mp)], '<=', 0.0)
        handle.add_row(f"{name}.rc", [(l, -c) for l, c in terms] + [(flag, mr)], '<=', mr - cost)
        psi.append(flag)

    objective = [(name, cost) for name, _, cost, _ in cols if cost]
    return KKTBlock(prefix, columns, lam, delta, psi, objective, lp)


def u_rhs(instance, u_d):
    """-(h + G x - F_d(x) u_d) split into a constant and a matrix acting on x."""
    ddu = instance.ddu
    u_d = np.asarray(u_d, dtype=float)
    r0 = -np.array(ddu.h, dtype=float)
    R = -np.array(ddu.G, dtype=float)
    if ddu.m_u:
        r0 = r0 + ddu.F_d0 @ u_d
        if ddu.F_d_lin.shape[0]:
            R = R + np.stack([ddu.F_d_lin[k] @ u_d for k in range(ddu.F_d_lin.shape[0])], axis=1)
    return r0, R


@dataclass
class IndicatorGadget:
    theta: str
    link_row: str
    usage_rows: List[str] = field(default_factory=list)


def add_indicator(handle, prefix, u_tilde, bigm):
    """theta <= M 1^T u_tilde; theta = 1 may only switch a cutting set off when the slack is used."""
    theta = handle.add_var(f"{prefix}.theta", 'binary')
    link = handle.add_row(f"{prefix}.link", [(theta, 1.0)] + [(u, -bigm.get('indicator')) for u in u_tilde], '<=', 0.0)
    return IndicatorGadget(theta, link)


@dataclass
class OUBlock:
    block_id: str
    kind: str
    fixed_u_d: Optional[np.ndarray]
    pairs: list
    u_c: List[str]
    u_tilde: List[str]
    lam: List[str]
    kkt: KKTBlock
    mu: List[str] = field(default_factory=list)
    eta_hat: Optional[str] = None
    indicator: Optional[IndicatorGadget] = None

    @property
    def theta(self):
        return self.indicator.theta if self.indicator else None


def build_parametric_lp(instance, x, u_d, beta, backend, bigm):
    """max (-E_c u_c)^T beta - M 1^T u_tilde  s.t.  F_c u_c - u_tilde <= h + G x - F_d(x) u_d.

    Always feasible and bounded; variables are named uc[i] and ut[i].
    """
    ddu, rec = instance.ddu, instance.recourse
    beta = np.asarray(beta, dtype=float)
    if len(beta) != rec.mu_y or len(u_d) != ddu.m_u:
        raise ValueError("dimension mismatch in parametric LP data")
    handle = backend.model('parametric', sense='max')
    uc = handle.add_vars('uc', ddu.n_u)
    ut = handle.add_vars('ut', ddu.mu_u)
    rhs = ddu.rhs(x) - (ddu.F_d(x) @ np.asarray(u_d, dtype=float) if ddu.m_u else 0.0)
    handle.add_matrix_rows('U', [(ddu.F_c, uc), (-np.eye(ddu.mu_u), ut)], '<=', rhs)
    obj = -(rec.E_c.T @ beta) if ddu.n_u else np.zeros(0)
    handle.set_objective(list(zip(uc, obj)) + [(u, -bigm.get('penalty')) for u in ut])
    return handle


def build_OU_point(handle, instance, u_d, pi, bigm, x, prefix):
    """OU(x, u_d, pi): u_c optimal for the parametric LP with beta = pi, guarded by theta."""
    ddu, rec = instance.ddu, instance.recourse
    penalty = bigm.get('penalty')
    lp = InnerLP(ddu.mu_u)
    lp.add_group('uc', -ddu.F_c, rec.E_c.T @ np.asarray(pi, dtype=float))
    lp.add_group('ut', np.eye(ddu.mu_u), penalty)
    r0, R = u_rhs(instance, u_d)
    lp.r0 = r0
    lp.add_rhs(R, x)
    lp.dual_bound[:] = penalty
    kkt = add_kkt(handle, prefix, lp, bigm)
    gadget = add_indicator(handle, prefix, kkt['ut'], bigm)
    return OUBlock(prefix, 'point_u', np.asarray(u_d, dtype=float), [(None, np.asarray(pi, dtype=float))],
                   kkt['uc'], kkt['ut'], kkt.duals, kkt, indicator=gadget)


def _check_pairs(pairs):
    if not pairs:
        raise ValueError("OU block needs at least one (y_d, pi) pair")
    for a in range(len(pairs)):
        for b in range(a + 1, len(pairs)):
            if vectors_close(pairs[a][0], pairs[b][0]):
                raise ValueError(f"duplicate y_d {list(pairs[a][0])} in pairs")


def build_OU_tuple(handle, instance, pairs, bigm, x, prefix, kind='optimality', u_d=None, slack=False):
    """OU(x, {(y_d, pi)}): (u_c, eta_hat) optimal for max eta_hat over U(x|u_d),
    eta_hat <= c2d y_d^t + (d - B1 x - E u - B2d y_d^t)^T pi^t for every t.

    Feasibility tuples drop the c2d term. slack=True adds u_tilde with penalty M.
    """
    _check_pairs(pairs)
    ddu, rec = instance.ddu, instance.recourse
    u_d = np.zeros(0) if u_d is None else np.asarray(u_d, dtype=float)
    T = len(pairs)
    lp = InnerLP(T + ddu.mu_u)
    eta_col = np.concatenate([-np.ones(T), np.zeros(ddu.mu_u)])
    lp.add_group('eta', eta_col, -1.0, kind='free')
    uc_rows = [-(np.asarray(pi) @ rec.E_c) for _, pi in pairs]
    uc_block = np.vstack(uc_rows + [-ddu.F_c]) if ddu.n_u else np.zeros((T + ddu.mu_u, 0))
    lp.add_group('uc', uc_block, 0.0)
    if slack:
        lp.add_group('ut', np.vstack([np.zeros((T, ddu.mu_u)), np.eye(ddu.mu_u)]), bigm.get('penalty'))

    r0 = np.zeros(T + ddu.mu_u)
    R = np.zeros((T + ddu.mu_u, instance.first_stage.size))
    for t, (y_d, pi) in enumerate(pairs):
        y_d = np.asarray(y_d, dtype=float)
        pi = np.asarray(pi, dtype=float)
        base = rec.d - (rec.E_d @ u_d if ddu.m_u else 0.0) - (rec.B2d @ y_d if rec.m_y else 0.0)
        const = float(base @ pi) + (float(rec.c2d @ y_d) if kind == 'optimality' and rec.m_y else 0.0)
        r0[t] = -const
        R[t] = rec.B1.T @ pi
    ur0, uR = u_rhs(instance, u_d)
    r0[T:] = ur0
    R[T:] = uR
    lp.r0 = r0
    lp.add_rhs(R, x)
    lp.dual_bound[:T] = 1.0
    if slack:
        lp.dual_bound[T:] = bigm.get('penalty')

    kkt = add_kkt(handle, prefix, lp, bigm)
    block = OUBlock(prefix, 'tuple_yd_pi', u_d if ddu.m_u else None, list(pairs), kkt['uc'],
                    kkt.columns.get('ut', []), kkt.duals[T:], kkt, mu=kkt.duals[:T], eta_hat=kkt['eta'][0])
    return block


def build_OU_mixed(handle, instance, u_d, pairs, bigm, x, prefix, kind='optimality'):
    """OU(x, u_d, {(y_d, pi)}) with slack u_tilde and the theta gadget; m_u = 0 gives the tuple block."""
    if instance.ddu.m_u == 0:
        return build_OU_tuple(handle, instance, pairs, bigm, x, prefix, kind)
    block = build_OU_tuple(handle, instance, pairs, bigm, x, prefix, kind, u_d=u_d, slack=True)
    block.kind = 'mixed'
    block.indicator = add_indicator(handle, prefix, block.u_tilde, bigm)
    return block


@dataclass
class PenalizedRecourse:
    slack: List[str]
    weight: float
    single_dim: bool


@dataclass
class RecourseKKT:
    kkt: KKTBlock
    y_c: List[str]
    y_d: List[str]
    penalized: Optional[PenalizedRecourse]
    value_terms: List[Tuple[str, float]]
    constant: float
    coupling: List[str]


def kkt_of_recourse_lp(handle, instance, prefix, bigm, x, u_c, u_d, fix_y_d=None,
                       objective='cost', slack=None, weight=None, relax_y_d=False):
    """KKT rows making y_c optimal for the recourse LP at variable (u_c, u_d).

    objective='slack' minimizes only the feasibility slack; slack in
    {None, 'vector', 'scalar'} attaches y_tilde with the given weight.
    fix_y_d may be numbers or outer variable names; relax_y_d lets y_d move
    continuously in its box instead.
    """
    rec = instance.recourse
    mu_y = rec.mu_y
    extra = rec.m_y if relax_y_d else 0
    lp = InnerLP(mu_y + extra)
    pad = np.zeros((extra, rec.n_y))
    lp.add_group('yc', np.vstack([rec.B2c, pad]), rec.c2c if objective == 'cost' else 0.0)

    constant = 0.0
    lp.r0 = np.concatenate([np.array(rec.d, dtype=float), np.zeros(extra)])
    lp.add_rhs(np.vstack([-rec.B1, np.zeros((extra, rec.B1.shape[1]))]), x)
    lp.add_rhs(np.vstack([-rec.E_c, np.zeros((extra, rec.E_c.shape[1]))]), u_c)
    lp.add_rhs(np.vstack([-rec.E_d, np.zeros((extra, rec.E_d.shape[1]))]), u_d)
    value_terms = []
    if relax_y_d:
        lo, hi = rec.y_d_bounds[:, 0], rec.y_d_bounds[:, 1]
        yd_cost = rec.c2d if objective == 'cost' else np.zeros(rec.m_y)
        lp.add_group('yd', np.vstack([rec.B2d, -np.eye(rec.m_y)]), yd_cost)
        lp.r0[:mu_y] -= rec.B2d @ lo
        lp.r0[mu_y:] = -(hi - lo)
        constant += float(yd_cost @ lo)
    elif rec.m_y and fix_y_d is not None:
        lp.add_rhs(np.vstack([-rec.B2d, np.zeros((extra, rec.m_y))]), fix_y_d)
        if objective == 'cost':
            if _is_names(fix_y_d):
                value_terms += [(v, c) for v, c in zip(fix_y_d, rec.c2d)]
            else:
                constant += float(rec.c2d @ np.asarray(fix_y_d, dtype=float))

    penalized = None
    if slack:
        w = 1.0 if weight is None else float(weight)
        if slack == 'scalar':
            lp.add_group('yt', np.concatenate([np.ones(mu_y), np.zeros(extra)]), w)
        else:
            lp.add_group('yt', np.vstack([np.eye(mu_y), np.zeros((extra, mu_y))]), w)
        lp.dual_bound[:mu_y] = w
    if relax_y_d:
        base = np.where(np.isfinite(lp.dual_bound[:mu_y]), lp.dual_bound[:mu_y], bigm.get('dual'))
        lp.dual_bound[mu_y:] = np.abs(rec.c2d) + np.abs(rec.B2d).T @ base

    kkt = add_kkt(handle, prefix, lp, bigm)
    if slack:
        penalized = PenalizedRecourse(kkt['yt'], w, slack == 'scalar')
    value_terms = kkt.objective + value_terms
    return RecourseKKT(kkt, kkt['yc'], kkt.columns.get('yd', []), penalized, value_terms, constant,
                       kkt.duals[:mu_y])


def add_uncertainty(handle, instance, x, prefix='u'):
    """u_c >= 0, integer u_d in its box and U(x) rows for a fixed first-stage point."""
    ddu = instance.ddu
    uc = handle.add_vars(f"{prefix}c", ddu.n_u)
    ud = [handle.add_var(f"{prefix}d[{j}]", 'int', lo, hi) for j, (lo, hi) in enumerate(ddu.u_d_bounds)]
    handle.add_matrix_rows(f"{prefix}.U", [(ddu.F_c, uc), (ddu.F_d(x), ud)], '<=', ddu.rhs(x))
    handle.add_matrix_rows(f"{prefix}.pure", [(ddu.pure_A, ud)], '<=', ddu.pure_b)
    return uc, ud


@dataclass
class RecourseSolution:
    status: str
    value: Optional[float] = None
    y_c: Optional[np.ndarray] = None
    y_d: Optional[np.ndarray] = None
    pi: Optional[np.ndarray] = None

    @property
    def optimal(self):
        return self.status == 'optimal'


def recourse_residual(instance, x, scenario, y_d=None):
    r = instance.recourse.residual(x, scenario)
    if y_d is not None and instance.recourse.m_y:
        r = r - instance.recourse.B2d @ np.asarray(y_d, dtype=float)
    return r


def in_Pi(recourse, pi, tol=1e-6):
    pi = np.asarray(pi, dtype=float)
    return bool(np.all(pi >= -tol) and np.all(recourse.B2c.T @ pi <= recourse.c2c + tol))


def recourse_lp(instance, x, scenario, backend, y_d=None, tol=1e-6):
    """min c2c y_c + c2d y_d with y_d fixed; pi is an optimal dual in Pi."""
    rec = instance.recourse
    residual = recourse_residual(instance, x, scenario, y_d)
    const = float(rec.c2d @ np.asarray(y_d, dtype=float)) if (y_d is not None and rec.m_y) else 0.0
    handle = backend.model('recourse', sense='min')
    yc = handle.add_vars('yc', rec.n_y)
    rows = handle.add_matrix_rows('r', [(rec.B2c, yc)], '>=', residual)
    handle.set_objective(list(zip(yc, rec.c2c)))
    outcome = solve_lp_with_duals(handle)
    if not outcome.optimal:
        return RecourseSolution(outcome.status)
    value = float(outcome.objective)
    pi = np.array([outcome.dual.get(r, 0.0) if r else 0.0 for r in rows], dtype=float)
    if not (in_Pi(rec, pi, tol) and abs(residual @ pi - value) <= tol * max(1.0, abs(value))):
        logger.debug("backend duals failed the Pi check; solving the dual LP")
        status, dual_value, pi = max_over_dual(backend, rec.B2c, rec.c2c, residual, name='recourse_dual')
        if status != 'optimal':
            return RecourseSolution(status)
        value = dual_value
    return RecourseSolution('optimal', value + const, outcome.values(yc),
                            None if y_d is None else np.asarray(y_d, dtype=float), np.clip(pi, 0.0, None))


def recourse_mip(instance, x, scenario, backend):
    """min c2c y_c + c2d y_d over Y(x, u) with integer y_d."""
    rec = instance.recourse
    handle = backend.model('recourse_mip', sense='min')
    yc = handle.add_vars('yc', rec.n_y)
    yd = [handle.add_var(f"yd[{j}]", 'int', lo, hi) for j, (lo, hi) in enumerate(rec.y_d_bounds)]
    handle.add_matrix_rows('r', [(rec.B2c, yc), (rec.B2d, yd)], '>=', rec.residual(x, scenario))
    handle.set_objective(list(zip(yc, rec.c2c)) + list(zip(yd, rec.c2d)))
    outcome = handle.solve()
    if not outcome.optimal:
        return RecourseSolution(outcome.status)
    return RecourseSolution('optimal', float(outcome.objective), outcome.values(yc), np.round(outcome.values(yd)))


def relaxed_recourse_lp(instance, x, scenario, backend):
    """LP relaxation of the MIP recourse (y_d continuous in its box); pi are the coupling-row duals."""
    rec = instance.recourse
    handle = backend.model('recourse_relaxed', sense='min')
    yc = handle.add_vars('yc', rec.n_y)
    yd = [handle.add_var(f"yd[{j}]", 'cont', lo, hi) for j, (lo, hi) in enumerate(rec.y_d_bounds)]
    rows = handle.add_matrix_rows('r', [(rec.B2c, yc), (rec.B2d, yd)], '>=', rec.residual(x, scenario))
    handle.set_objective(list(zip(yc, rec.c2c)) + list(zip(yd, rec.c2d)))
    outcome = solve_lp_with_duals(handle)
    if not outcome.optimal:
        return RecourseSolution(outcome.status)
    pi = np.array([outcome.dual.get(r, 0.0) if r else 0.0 for r in rows], dtype=float)
    if pi.sum() < 0:
        # backends differ on the sign convention of >= rows
        pi = -pi
    return RecourseSolution('optimal', float(outcome.objective), outcome.values(yc), outcome.values(yd),
                            np.clip(pi, 0.0, None))


def slack_recourse(instance, x, scenario, backend, y_d=None, vector=True):
    """min 1^T y_tilde over the slack-extended recourse; y_d=None makes y_d an integer variable."""
    rec = instance.recourse
    handle = backend.model('slack_recourse', sense='min')
    yc = handle.add_vars('yc', rec.n_y)
    yt = handle.add_vars('yt', rec.mu_y if vector else 1)
    slack_block = np.eye(rec.mu_y) if vector else np.ones((rec.mu_y, 1))
    blocks = [(rec.B2c, yc), (slack_block, yt)]
    residual = rec.residual(x, scenario)
    yd = []
    if rec.m_y:
        if y_d is None:
            yd = [handle.add_var(f"yd[{j}]", 'int', lo, hi) for j, (lo, hi) in enumerate(rec.y_d_bounds)]
            blocks.append((rec.B2d, yd))
        else:
            residual = residual - rec.B2d @ np.asarray(y_d, dtype=float)
    handle.add_matrix_rows('r', blocks, '>=', residual)
    handle.set_objective([(v, 1.0) for v in yt])
    outcome = handle.solve()
    if not outcome.optimal:
        return RecourseSolution(outcome.status)
    found_yd = np.round(outcome.values(yd)) if yd else (np.asarray(y_d, dtype=float) if y_d is not None else np.zeros(0))
    return RecourseSolution('optimal', float(outcome.objective), outcome.values(yc), found_yd)


def normalized_dual(instance, residual, backend, vector=True):
    """max residual.pi over {B2c^T pi <= 0, pi >= 0} with pi <= 1 (vector slack) or 1^T pi <= 1 (scalar)."""
    rec = instance.recourse
    if vector:
        status, value, pi = max_over_dual(backend, rec.B2c, np.zeros(rec.n_y), residual, box_bound=1.0, name='ndual')
    else:
        status, value, pi = max_over_dual(backend, rec.B2c, np.zeros(rec.n_y), residual, sum_bound=1.0, name='ndual')
    if status != 'optimal':
        raise BackendError(f"normalized dual LP ended with status {status}")
    return value, np.clip(pi, 0.0, None)


def penalized_dual(instance, residual, backend, weight):
    """max residual.pi over {B2c^T pi <= c2c, 0 <= pi <= weight}; a point of Pi."""
    rec = instance.recourse
    status, value, pi = max_over_dual(backend, rec.B2c, rec.c2c, residual, box_bound=weight, name='pdual')
    if status != 'optimal':
        raise BackendError(f"penalized dual LP ended with status {status}")
    return value, np.clip(pi, 0.0, None)


# checks on built and solved models


@dataclass
class ReformulationCheck:
    checked: int = 0
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def expect(self, condition, message):
        self.checked += 1
        if not condition:
            self.violations.append(message)


def u_section_nonempty(instance, x, u_d, backend):
    """True when U(x|u_d) = {u_c >= 0 : F_c u_c <= h + G x - F_d(x) u_d} has a point."""
    ddu = instance.ddu
    rhs = ddu.rhs(x) - (ddu.F_d(x) @ np.asarray(u_d, dtype=float) if ddu.m_u else 0.0)
    if ddu.n_u == 0:
        return bool(np.all(rhs >= -1e-9))
    handle = backend.model('u_section', sense='min')
    uc = handle.add_vars('uc', ddu.n_u)
    handle.add_matrix_rows('U', [(ddu.F_c, uc)], '<=', rhs)
    handle.set_objective([])
    return handle.solve().optimal


def check_slack_dichotomy(instance, x, u_d, beta, backend, bigm, tol=1e-6, check=None):
    """The parametric LP ends with u_tilde = 0 exactly when U(x|u_d) is nonempty."""
    check = check or ReformulationCheck()
    where = f"x={np.round(x, 4).tolist()} u_d={np.asarray(u_d).tolist()}"
    outcome = build_parametric_lp(instance, x, u_d, beta, backend, bigm).solve()
    if not outcome.optimal:
        check.expect(False, f"parametric LP {outcome.status} at {where}")
        return check
    slack = float(outcome.values([f"ut[{i}]" for i in range(instance.ddu.mu_u)]).sum())
    nonempty = u_section_nonempty(instance, x, u_d, backend)
    check.expect((slack <= tol) == nonempty,
                 f"u_tilde sum {slack:.3g} with U(x|u_d) {'nonempty' if nonempty else 'empty'} at {where}")
    return check


def kkt_products(block, outcome):
    """|s_i lam_i| per row and |z_j (q - W^T lam)_j| per sign-constrained column of a solved KKT block."""
    lp = block.lp
    lam = outcome.values(block.duals)
    activity = -lp.r0
    products = []
    for label, matrix, cost, kind in lp.groups:
        z = outcome.values(block.columns[label])
        activity = activity + matrix @ z
        if kind != 'free':
            products.extend(np.abs(z * (cost - matrix.T @ lam)))
    for matrix, names in lp.outer:
        activity = activity - matrix @ outcome.values(names)
    products.extend(np.abs(activity * lam))
    return np.asarray(products, dtype=float)


def check_master(master, outcome, backend, tol=1e-4, check=None):
    """Complementarity and theta checks on every OU block of a solved master."""
    check = check or ReformulationCheck()
    instance, rec = master.instance, master.instance.recourse
    x = master.x_value(outcome)
    m_ind = master.bigm.get('indicator')
    for block in master.blocks:
        worst = float(kkt_products(block.kkt, outcome).max(initial=0.0))
        check.expect(worst <= tol, f"{block.block_id}: complementarity product {worst:.3g}")
        if block.theta is None:
            continue
        theta = outcome.value(block.theta)
        if float(outcome.values(block.u_tilde).sum()) <= 1e-6:
            check.expect(theta < 0.5, f"{block.block_id}: theta = 1 with u_tilde = 0")
        if theta < 0.5:
            continue
        u_d = block.fixed_u_d if block.fixed_u_d is not None else np.zeros(0)
        check.expect(not u_section_nonempty(instance, x, u_d, backend),
                     f"{block.block_id}: switched off although U(x|u_d) is nonempty")
        # with y = 0 the guarded rows keep slack M - residual
        residual = rec.d - rec.B1 @ x - rec.E_c @ outcome.values(block.u_c)
        if instance.ddu.m_u:
            residual = residual - rec.E_d @ u_d
        check.expect(float(np.max(residual, initial=0.0)) <= m_ind / 2,
                     f"{block.block_id}: switched-off rows keep less than M/2 slack")
    return check
