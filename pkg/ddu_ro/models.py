import hashlib
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

logger = logging.getLogger(__name__)


def _frozen(a, dtype=float, ndim=None):
    arr = np.array(a, dtype=dtype, copy=True)
    if ndim is not None and arr.ndim != ndim and arr.size == 0:
        arr = arr.reshape((0,) * ndim)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FirstStageSet:
    """X = {x = (x_c, x_d) : x >= 0, x_d integer within bounds, A x >= b}."""
    n_x: int
    m_x: int
    A: np.ndarray
    b: np.ndarray
    integer_bounds: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'A', _frozen(self.A, ndim=2))
        object.__setattr__(self, 'b', _frozen(self.b, ndim=1))
        object.__setattr__(self, 'integer_bounds', _frozen(np.reshape(self.integer_bounds, (-1, 2)) if np.size(self.integer_bounds) else np.zeros((0, 2))))

    @property
    def size(self):
        return self.n_x + self.m_x

    def lower(self):
        return np.concatenate([np.zeros(self.n_x), self.integer_bounds[:, 0]])

    def upper(self):
        return np.concatenate([np.full(self.n_x, np.inf), self.integer_bounds[:, 1]])


@dataclass(frozen=True)
class DduSet:
    """U(x) = {u_c >= 0, u_d in U_d : F_c u_c + F_d(x) u_d <= h + G x}.

    F_d(x) = F_d0 + sum_k x_k F_d_lin[k]; pure rows read pure_A u_d <= pure_b.
    """
    n_u: int
    m_u: int
    F_c: np.ndarray
    F_d0: np.ndarray
    F_d_lin: np.ndarray
    G: np.ndarray
    h: np.ndarray
    u_d_bounds: np.ndarray
    pure_A: np.ndarray = None
    pure_b: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, 'F_c', _frozen(self.F_c, ndim=2))
        object.__setattr__(self, 'F_d0', _frozen(self.F_d0, ndim=2))
        object.__setattr__(self, 'F_d_lin', _frozen(self.F_d_lin, ndim=3))
        object.__setattr__(self, 'G', _frozen(self.G, ndim=2))
        object.__setattr__(self, 'h', _frozen(self.h, ndim=1))
        bounds = self.u_d_bounds if np.size(self.u_d_bounds) else np.zeros((0, 2))
        object.__setattr__(self, 'u_d_bounds', _frozen(np.reshape(bounds, (-1, 2))))
        pure_A = self.pure_A if self.pure_A is not None and np.size(self.pure_A) else np.zeros((0, self.m_u))
        pure_b = self.pure_b if self.pure_b is not None else np.zeros(0)
        object.__setattr__(self, 'pure_A', _frozen(np.reshape(pure_A, (-1, self.m_u)) if self.m_u else np.zeros((len(pure_b), 0))))
        object.__setattr__(self, 'pure_b', _frozen(pure_b, ndim=1))

    @property
    def mu_u(self):
        return len(self.h)

    def F_d(self, x):
        x = np.asarray(x, dtype=float)
        if self.F_d_lin.shape[0] == 0:
            return np.array(self.F_d0)
        return self.F_d0 + np.tensordot(x, self.F_d_lin, axes=1)

    def rhs(self, x):
        return self.h + self.G @ np.asarray(x, dtype=float)

    def decision_dependent_columns(self):
        """First-stage indices k whose F_d_lin[k] is nonzero."""
        return [k for k in range(self.F_d_lin.shape[0]) if np.any(self.F_d_lin[k])]

    def pure_ok(self, u_d, tol=1e-9):
        if len(self.pure_b) == 0:
            return True
        return bool(np.all(self.pure_A @ np.asarray(u_d, dtype=float) <= self.pure_b + tol))


@dataclass(frozen=True)
class RecourseSpec:
    """Y(x,u) = {y_c >= 0, y_d in Y_d : B2c y_c + B2d y_d >= d - B1 x - E_c u_c - E_d u_d}."""
    n_y: int
    m_y: int
    B1: np.ndarray
    B2c: np.ndarray
    B2d: np.ndarray
    E_c: np.ndarray
    E_d: np.ndarray
    d: np.ndarray
    c2c: np.ndarray
    c2d: np.ndarray
    y_d_bounds: np.ndarray

    def __post_init__(self):
        for name in ('B1', 'B2c', 'B2d', 'E_c', 'E_d'):
            object.__setattr__(self, name, _frozen(getattr(self, name), ndim=2))
        for name in ('d', 'c2c', 'c2d'):
            object.__setattr__(self, name, _frozen(getattr(self, name), ndim=1))
        bounds = self.y_d_bounds if np.size(self.y_d_bounds) else np.zeros((0, 2))
        object.__setattr__(self, 'y_d_bounds', _frozen(np.reshape(bounds, (-1, 2))))

    @property
    def mu_y(self):
        return len(self.d)

    def residual(self, x, scenario):
        """d - B1 x - E_c u_c - E_d u_d."""
        r = self.d - self.B1 @ np.asarray(x, dtype=float)
        if self.E_c.shape[1]:
            r = r - self.E_c @ scenario.u_c
        if self.E_d.shape[1]:
            r = r - self.E_d @ scenario.u_d
        return r


@dataclass(frozen=True)
class Scenario:
    u_c: np.ndarray
    u_d: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'u_c', _frozen(self.u_c, ndim=1))
        object.__setattr__(self, 'u_d', _frozen(np.round(np.asarray(self.u_d, dtype=float)), ndim=1))

    def key(self):
        return tuple(int(v) for v in self.u_d)


@dataclass(frozen=True)
class ProblemInstance:
    first_stage: FirstStageSet
    ddu: DduSet
    recourse: RecourseSpec
    c1: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'c1', _frozen(self.c1, ndim=1))

    @property
    def name(self):
        return self.meta.get('name', 'unnamed')

    def digest(self):
        from .schemas import instance_schema
        payload = json.dumps(instance_schema.dump(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class ValidationReport:
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def add(self, tag, detail):
        self.violations.append(f"{tag}: {detail}")


@dataclass
class BoundResult:
    status: str
    value: Optional[float] = None
    x: Optional[np.ndarray] = None
    scenario: Optional[Scenario] = None
    y_c: Optional[np.ndarray] = None
    y_d: Optional[np.ndarray] = None
    wall_time: float = 0.0


def _shape(arr):
    return tuple(np.shape(arr))


def validate(instance):
    report = ValidationReport()
    fs, ddu, rec = instance.first_stage, instance.ddu, instance.recourse
    nx = fs.n_x + fs.m_x

    if fs.A.ndim != 2 or (fs.A.size and fs.A.shape[1] != nx):
        report.add('column mismatch: first_stage', f"A has shape {_shape(fs.A)}, expected {nx} columns")
    if fs.A.shape[0] != len(fs.b):
        report.add('row mismatch: first_stage', f"A has {fs.A.shape[0]} rows, b has {len(fs.b)}")
    if fs.integer_bounds.shape[0] != fs.m_x:
        report.add('dimension mismatch: first_stage', f"{fs.integer_bounds.shape[0]} integer bounds for {fs.m_x} integer variables")
    elif fs.m_x and not np.all(np.isfinite(fs.integer_bounds)):
        report.add('unbounded integer variable', 'first-stage integer bounds must be finite')
    elif fs.m_x and np.any(fs.integer_bounds[:, 0] > fs.integer_bounds[:, 1]):
        report.add('empty box: first_stage', 'an integer lower bound exceeds its upper bound')
    if len(instance.c1) != nx:
        report.add('dimension mismatch: c1', f"length {len(instance.c1)}, expected {nx}")

    mu_u = ddu.mu_u
    if _shape(ddu.F_c) != (mu_u, ddu.n_u):
        report.add('row mismatch: ddu', f"F_c has shape {_shape(ddu.F_c)}, expected {(mu_u, ddu.n_u)}")
    if _shape(ddu.F_d0) != (mu_u, ddu.m_u):
        report.add('row mismatch: ddu', f"F_d0 has shape {_shape(ddu.F_d0)}, expected {(mu_u, ddu.m_u)}")
    if _shape(ddu.F_d_lin) not in ((nx, mu_u, ddu.m_u), (0, mu_u, ddu.m_u)) and ddu.F_d_lin.size:
        report.add('row mismatch: ddu', f"F_d_lin has shape {_shape(ddu.F_d_lin)}, expected {(nx, mu_u, ddu.m_u)}")
    if _shape(ddu.G) != (mu_u, nx):
        report.add('row mismatch: ddu', f"G has shape {_shape(ddu.G)}, expected {(mu_u, nx)}")
    if ddu.u_d_bounds.shape[0] != ddu.m_u:
        report.add('dimension mismatch: ddu', f"{ddu.u_d_bounds.shape[0]} u_d bounds for {ddu.m_u} discrete coordinates")
    elif ddu.m_u and not np.all(np.isfinite(ddu.u_d_bounds)):
        report.add('A2: unbounded uncertainty', 'every u_d coordinate needs finite bounds')
    elif ddu.m_u and np.any(ddu.u_d_bounds[:, 0] > ddu.u_d_bounds[:, 1]):
        report.add('empty box: ddu', 'a u_d lower bound exceeds its upper bound')
    if ddu.pure_A.shape != (len(ddu.pure_b), ddu.m_u):
        report.add('row mismatch: ddu', f"pure constraints have shape {_shape(ddu.pure_A)} for {len(ddu.pure_b)} rows")

    mu_y = rec.mu_y
    expected = {
        'B1': (mu_y, nx), 'B2c': (mu_y, rec.n_y), 'B2d': (mu_y, rec.m_y),
        'E_c': (mu_y, ddu.n_u), 'E_d': (mu_y, ddu.m_u),
    }
    for name, shape in expected.items():
        if _shape(getattr(rec, name)) != shape:
            report.add('row mismatch: recourse', f"{name} has shape {_shape(getattr(rec, name))}, expected {shape}")
    if len(rec.c2c) != rec.n_y or len(rec.c2d) != rec.m_y:
        report.add('dimension mismatch: recourse', 'objective lengths differ from (n_y, m_y)')
    if rec.y_d_bounds.shape[0] != rec.m_y:
        report.add('dimension mismatch: recourse', f"{rec.y_d_bounds.shape[0]} y_d bounds for {rec.m_y} discrete coordinates")
    elif rec.m_y and not np.all(np.isfinite(rec.y_d_bounds)):
        report.add('unbounded integer variable', 'recourse integer bounds must be finite')

    if not (np.any(instance.c1) or np.any(rec.c2c) or np.any(rec.c2d)):
        report.add('empty objective', 'c1, c2c and c2d are all zero')

    for v in report.violations:
        logger.debug("instance %s: %s", instance.name, v)
    return report


def scenario_membership(instance, x, s, tol=1e-6):
    ddu = instance.ddu
    u_c = np.asarray(s.u_c, dtype=float)
    u_d = np.asarray(s.u_d, dtype=float)
    if len(u_c) != ddu.n_u or len(u_d) != ddu.m_u:
        raise ValueError("scenario dimensions do not match the instance")
    if np.any(u_c < -tol):
        return False
    if ddu.m_u:
        lo, hi = ddu.u_d_bounds[:, 0], ddu.u_d_bounds[:, 1]
        if np.any(u_d < lo - tol) or np.any(u_d > hi + tol):
            return False
        if np.any(np.abs(u_d - np.round(u_d)) > tol):
            return False
        if not ddu.pure_ok(u_d, tol):
            return False
    lhs = ddu.F_c @ u_c + ddu.F_d(x) @ u_d
    return bool(np.all(lhs <= ddu.rhs(x) + tol))


def enumerate_u_d(instance):
    """Integer points of the u_d box satisfying the pure u_d rows."""
    ddu = instance.ddu
    ranges = [range(int(lo), int(hi) + 1) for lo, hi in ddu.u_d_bounds]
    return [np.array(p, dtype=float) for p in itertools.product(*ranges) if ddu.pure_ok(p)]


def count_u_d(instance, cap=100000):
    """|U_d|, or None when the u_d box holds more than cap points."""
    ddu = instance.ddu
    ranges = [range(int(lo), int(hi) + 1) for lo, hi in ddu.u_d_bounds]
    if math.prod(len(r) for r in ranges) > cap:
        return None
    count = 0
    for p in itertools.product(*ranges):
        if ddu.pure_ok(p):
            count += 1
    return count


def enumerate_x(instance, tol=1e-9):
    """Finite X; only defined when the first stage has no continuous variables."""
    fs = instance.first_stage
    if fs.n_x:
        raise ValueError("X is not enumerable with continuous first-stage variables")
    ranges = [range(int(lo), int(hi) + 1) for lo, hi in fs.integer_bounds]
    points = []
    for p in itertools.product(*ranges):
        x = np.array(p, dtype=float)
        if len(fs.b) == 0 or np.all(fs.A @ x >= fs.b - tol):
            points.append(x)
    return points


def enumerate_y_d(instance):
    ranges = [range(int(lo), int(hi) + 1) for lo, hi in instance.recourse.y_d_bounds]
    return [np.array(p, dtype=float) for p in itertools.product(*ranges)]


def tighten_u_d_box(instance, index, upper):
    """Copy of the instance whose u_d[index] upper bound is lowered (U shrinks)."""
    bounds = np.array(instance.ddu.u_d_bounds)
    bounds[index, 1] = min(bounds[index, 1], upper)
    return replace(instance, ddu=replace(instance.ddu, u_d_bounds=bounds),
                   meta={**instance.meta, 'name': f"{instance.name}-tight{index}"})


def add_recourse_column(instance, column, cost):
    """Copy of the instance with one extra continuous recourse column (Y grows)."""
    rec = instance.recourse
    column = np.asarray(column, dtype=float).reshape(-1, 1)
    new_rec = replace(rec, n_y=rec.n_y + 1,
                      B2c=np.hstack([rec.B2c, column]),
                      c2c=np.append(rec.c2c, cost))
    return replace(instance, recourse=new_rec, meta={**instance.meta, 'name': f"{instance.name}-col"})


def _first_stage_upper(instance, k, backend):
    fs = instance.first_stage
    if k >= fs.n_x:
        return float(fs.integer_bounds[k - fs.n_x, 1])
    handle = backend.model(f"xbound{k}", sense='max')
    names = add_first_stage(handle, instance, relax=True)
    handle.set_objective([(names[k], 1.0)])
    outcome = handle.solve()
    if outcome.status == 'unbounded':
        from .errors import InstanceError
        raise InstanceError(f"first-stage variable {k} multiplies u_d but is unbounded over X")
    if outcome.status != 'optimal':
        return 0.0
    return float(outcome.objective)


def add_first_stage(handle, instance, prefix='x', relax=False):
    """Register x = (x_c, x_d) and the rows A x >= b on a model; returns names."""
    fs = instance.first_stage
    names = []
    for k in range(fs.n_x):
        names.append(handle.add_var(f"{prefix}[{k}]"))
    for j in range(fs.m_x):
        lo, hi = fs.integer_bounds[j]
        names.append(handle.add_var(f"{prefix}[{fs.n_x + j}]", kind='cont' if relax else 'int', lb=lo, ub=hi))
    handle.add_matrix_rows(f"{prefix}.A", [(fs.A, names)], '>=', fs.b)
    return names


def relaxation_bound_wR(instance, backend, big_m=None, time_limit=None):
    """w_R = min{c1 x + c2 y : x in X, u in U(x), y in Y(x,u)}.

    Products x_k u_d,j are exact through a binary expansion of u_d and a
    McCormick envelope on every bit (x_k bounded over X).
    """
    started = time.perf_counter()
    fs, ddu, rec = instance.first_stage, instance.ddu, instance.recourse
    handle = backend.model('wR', sense='min')
    x = add_first_stage(handle, instance)
    u_c = [handle.add_var(f"uc[{i}]") for i in range(ddu.n_u)]
    u_d = [handle.add_var(f"ud[{j}]", kind='int', lb=lo, ub=hi) for j, (lo, hi) in enumerate(ddu.u_d_bounds)]
    y_c = [handle.add_var(f"yc[{i}]") for i in range(rec.n_y)]
    y_d = [handle.add_var(f"yd[{j}]", kind='int', lb=lo, ub=hi) for j, (lo, hi) in enumerate(rec.y_d_bounds)]

    # z[k, j] stands for x_k * u_d,j
    products = {}
    active = ddu.decision_dependent_columns()
    if active and ddu.m_u:
        for j, (lo, hi) in enumerate(ddu.u_d_bounds):
            width = int(hi - lo)
            bits = []
            if width > 0:
                n_bits = int(np.floor(np.log2(width))) + 1
                bits = [handle.add_var(f"ud[{j}].bit{b}", kind='binary') for b in range(n_bits)]
                handle.add_row(f"ud[{j}].expand", [(u_d[j], 1.0)] + [(w, -float(2 ** b)) for b, w in enumerate(bits)], '==', float(lo))
            for k in active:
                if not np.any(ddu.F_d_lin[k][:, j]):
                    continue
                x_up = _first_stage_upper(instance, k, backend)
                z = handle.add_var(f"z[{k},{j}]", kind='free')
                terms = [(z, 1.0), (x[k], -float(lo))]
                for b, w in enumerate(bits):
                    p = handle.add_var(f"p[{k},{j},{b}]")
                    handle.add_row(f"p[{k},{j},{b}].a", [(p, 1.0), (w, -x_up)], '<=', 0.0)
                    handle.add_row(f"p[{k},{j},{b}].b", [(p, 1.0), (x[k], -1.0)], '<=', 0.0)
                    handle.add_row(f"p[{k},{j},{b}].c", [(p, 1.0), (x[k], -1.0), (w, -x_up)], '>=', -x_up)
                    terms.append((p, -float(2 ** b)))
                handle.add_row(f"z[{k},{j}].def", terms, '==', 0.0)
                products[(k, j)] = z

    for i in range(ddu.mu_u):
        terms = [(u_c[c], ddu.F_c[i, c]) for c in range(ddu.n_u)]
        terms += [(u_d[j], ddu.F_d0[i, j]) for j in range(ddu.m_u)]
        terms += [(z, ddu.F_d_lin[k][i, j]) for (k, j), z in products.items()]
        terms += [(x[k], -ddu.G[i, k]) for k in range(fs.size)]
        handle.add_row(f"U[{i}]", terms, '<=', ddu.h[i])
    handle.add_matrix_rows('Ud', [(ddu.pure_A, u_d)], '<=', ddu.pure_b)
    handle.add_matrix_rows('Y', [(rec.B2c, y_c), (rec.B2d, y_d), (rec.B1, x), (rec.E_c, u_c), (rec.E_d, u_d)], '>=', rec.d)

    objective = [(x[k], instance.c1[k]) for k in range(fs.size)]
    objective += [(y_c[i], rec.c2c[i]) for i in range(rec.n_y)]
    objective += [(y_d[j], rec.c2d[j]) for j in range(rec.m_y)]
    handle.set_objective(objective)
    outcome = handle.solve(time_limit=time_limit)

    result = BoundResult(status=outcome.status, wall_time=time.perf_counter() - started)
    if outcome.status == 'optimal':
        result.value = outcome.objective
        result.x = outcome.values(x)
        result.scenario = Scenario(outcome.values(u_c), outcome.values(u_d))
        result.y_c = outcome.values(y_c)
        result.y_d = outcome.values(y_d)
    logger.info("w_R for %s: status=%s value=%s", instance.name, result.status, result.value)
    return result
