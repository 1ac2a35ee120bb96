"""Thin backend-agnostic layer over python-mip.

Models are addressed by symbolic names; every variable carries a declared kind
(cont >= 0, free, binary, bounded int). Rows are added from (name, coef) terms
or from dense numpy blocks.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, Optional

import mip
import numpy as np

from ddu_ro.errors import BackendError, RayError

logger = logging.getLogger(__name__)

SOLVER_NAMES = {'CBC': mip.CBC, 'GRB': mip.GRB, 'GUROBI': mip.GRB, 'HIGHS': 'HiGHS'} # HiGHS needs python-mip >= 1.16

_STATUS_MAP = {
    mip.OptimizationStatus.OPTIMAL: 'optimal',
    mip.OptimizationStatus.FEASIBLE: 'limit',
    mip.OptimizationStatus.NO_SOLUTION_FOUND: 'limit',
    mip.OptimizationStatus.INFEASIBLE: 'infeasible',
    mip.OptimizationStatus.INT_INFEASIBLE: 'infeasible',
    mip.OptimizationStatus.UNBOUNDED: 'unbounded',
}

ZERO_COEF = 1e-13


@dataclass(frozen=True)
class BigMConfig:
    default: float = 1e4
    scopes: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for value in [self.default, *self.scopes.values()]:
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"big-M must be positive and finite, got {value}")

    def get(self, scope):
        return float(self.scopes.get(scope, self.default))


@dataclass
class SolveOutcome:
    status: str
    objective: Optional[float] = None
    bound: Optional[float] = None
    primal: Dict[str, float] = field(default_factory=dict)
    dual: Dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def optimal(self):
        return self.status == 'optimal'

    def value(self, name):
        return self.primal[name]

    def values(self, names):
        return np.array([self.primal[n] for n in names], dtype=float)


@dataclass
class RayResult:
    gamma: np.ndarray
    value: float
    wall_time: float = 0.0


class Backend:
    def __init__(self, name='CBC', threads=1, seed=0, integer_tol=1e-6, mip_gap=1e-6):
        key = name.upper()
        if key not in SOLVER_NAMES:
            raise BackendError(f"unknown backend '{name}'")
        self.name = key
        self.solver_name = SOLVER_NAMES[key]
        self.threads = threads
        self.seed = seed
        self.integer_tol = integer_tol
        self.mip_gap = mip_gap

    @classmethod
    def from_config(cls, config):
        return cls(config.backend_name, config.backend_threads, config.backend_seed,
                   config.integer_tol, config.mip_gap)

    def model(self, name, sense='min'):
        return ModelHandle(self, name, sense)


class ModelHandle:
    def __init__(self, backend, name, sense='min'):
        self.backend = backend
        self.name = name
        self.sense = sense
        try:
            self.model = mip.Model(name=name, sense=mip.MINIMIZE if sense == 'min' else mip.MAXIMIZE,
                                   solver_name=backend.solver_name)
        except Exception as exc:
            raise BackendError(f"cannot create a {backend.name} model: {exc}") from exc
        self.model.verbose = 0
        self.model.threads = backend.threads
        self.model.seed = backend.seed
        self.model.integer_tol = backend.integer_tol
        self.model.max_mip_gap = backend.mip_gap
        self.variables = {}
        self.kinds = {}
        self.constraints = {}
        self._zero = None

    @property
    def is_lp(self):
        return all(kind in ('cont', 'free') for kind in self.kinds.values())

    def add_var(self, name, kind='cont', lb=None, ub=None):
        if name in self.variables:
            raise BackendError(f"duplicate variable '{name}' in model {self.name}")
        if kind == 'cont':
            var = self.model.add_var(name=name, lb=0.0 if lb is None else float(lb),
                                     ub=mip.INF if ub is None else float(ub))
        elif kind == 'free':
            var = self.model.add_var(name=name, lb=-mip.INF if lb is None else float(lb),
                                     ub=mip.INF if ub is None else float(ub))
        elif kind == 'binary':
            var = self.model.add_var(name=name, var_type=mip.BINARY)
        elif kind == 'int':
            if lb is None or ub is None or not (math.isfinite(lb) and math.isfinite(ub)):
                raise BackendError(f"integer variable '{name}' needs finite bounds")
            var = self.model.add_var(name=name, lb=float(lb), ub=float(ub), var_type=mip.INTEGER)
        else:
            raise BackendError(f"unknown variable kind '{kind}'")
        self.variables[name] = var
        self.kinds[name] = kind
        return name

    def add_vars(self, prefix, count, kind='cont', lb=None, ub=None):
        return [self.add_var(f"{prefix}[{i}]", kind, lb, ub) for i in range(count)]

    def _zero_var(self):
        if self._zero is None:
            self._zero = self.add_var('__zero__', 'cont', 0.0, 0.0)
        return self.variables[self._zero]

    def _expr(self, terms):
        merged = {}
        for name, coef in terms:
            if name not in self.variables:
                raise BackendError(f"row references unregistered variable '{name}'")
            merged[name] = merged.get(name, 0.0) + float(coef)
        items = [(n, c) for n, c in merged.items() if abs(c) > ZERO_COEF]
        if not items:
            return None
        return mip.xsum(c * self.variables[n] for n, c in items)

    def add_row(self, name, terms, sense, rhs):
        if name in self.constraints:
            raise BackendError(f"duplicate row '{name}' in model {self.name}")
        expr = self._expr(terms)
        rhs = float(rhs)
        if expr is None:
            # a constant row: only its truth value matters
            holds = {'>=': 0.0 >= rhs - 1e-12, '<=': 0.0 <= rhs + 1e-12, '==': abs(rhs) <= 1e-12}[sense]
            if holds:
                return None
            expr = 1.0 * self._zero_var()
        if sense == '>=':
            constr = self.model.add_constr(expr >= rhs, name=name)
        elif sense == '<=':
            constr = self.model.add_constr(expr <= rhs, name=name)
        elif sense == '==':
            constr = self.model.add_constr(expr == rhs, name=name)
        else:
            raise BackendError(f"unknown row sense '{sense}'")
        self.constraints[name] = constr
        return name

    def add_matrix_rows(self, prefix, blocks, sense, rhs):
        """Row i: sum over blocks (M, names) of M[i] . names  <sense>  rhs[i]."""
        rhs = np.asarray(rhs, dtype=float)
        names = []
        for i in range(len(rhs)):
            terms = []
            for matrix, cols in blocks:
                if len(cols) == 0:
                    continue
                row = np.asarray(matrix)[i]
                terms.extend((cols[j], row[j]) for j in np.flatnonzero(row))
            names.append(self.add_row(f"{prefix}[{i}]", terms, sense, rhs[i]))
        return names

    def remove_row(self, name):
        constr = self.constraints.pop(name, None)
        if constr is not None:
            self.model.remove(constr)

    def set_objective(self, terms, constant=0.0):
        expr = self._expr(terms)
        if expr is None:
            expr = 1.0 * self._zero_var()
        expr = expr + float(constant)
        self.model.objective = mip.minimize(expr) if self.sense == 'min' else mip.maximize(expr)

    def solve(self, time_limit=None, gap=None):
        return solve_mip(self, {'time': time_limit, 'gap': gap})


def solve_mip(model, limits=None):
    limits = limits or {}
    handle = model.model
    if limits.get('gap') is not None:
        handle.max_mip_gap = limits['gap']
    time_limit = limits.get('time')
    started = time.perf_counter()
    try:
        status = handle.optimize(max_seconds=time_limit if time_limit else mip.INF)
    except Exception as exc:
        raise BackendError(f"{model.backend.name} failed on model {model.name}: {exc}") from exc
    elapsed = time.perf_counter() - started
    if status not in _STATUS_MAP:
        raise BackendError(f"{model.backend.name} returned status {status} on model {model.name}")
    outcome = SolveOutcome(status=_STATUS_MAP[status], wall_time=elapsed)
    if handle.num_solutions and status in (mip.OptimizationStatus.OPTIMAL, mip.OptimizationStatus.FEASIBLE):
        outcome.objective = handle.objective_value
        outcome.bound = handle.objective_bound
        outcome.primal = {n: (v.x if v.x is not None else 0.0) for n, v in model.variables.items()}
        if outcome.optimal and model.is_lp:
            outcome.bound = outcome.objective
            outcome.dual = {n: c.pi for n, c in model.constraints.items()}
    logger.debug("solved %s: %s obj=%s in %.3fs", model.name, outcome.status, outcome.objective, elapsed)
    return outcome


def solve_lp_with_duals(model, time_limit=None):
    if not model.is_lp:
        raise BackendError(f"model {model.name} has integer variables; duals are undefined")
    return solve_mip(model, {'time': time_limit})


def max_over_dual(backend, B2c, cost, residual, sum_bound=None, box_bound=None, name='dual'):
    """max residual.pi s.t. B2c^T pi <= cost, pi >= 0, optional 1.pi <= sum_bound, pi <= box_bound.

    Returns (status, value, pi); pi comes back as primal values of a simplex
    solve and is therefore a vertex of the feasible set.
    """
    B2c = np.asarray(B2c, dtype=float)
    residual = np.asarray(residual, dtype=float)
    handle = backend.model(name, sense='max')
    pi = handle.add_vars('pi', len(residual), 'cont', 0.0, box_bound)
    handle.add_matrix_rows('dualfeas', [(B2c.T, pi)], '<=', cost)
    if sum_bound is not None:
        handle.add_row('norm', [(p, 1.0) for p in pi], '<=', sum_bound)
    handle.set_objective(list(zip(pi, residual)))
    outcome = solve_lp_with_duals(handle)
    if not outcome.optimal:
        return outcome.status, None, None
    return 'optimal', float(outcome.objective), outcome.values(pi)


def extreme_ray_of_Pi(recourse, rhs_residual, backend, tol=1e-6):
    """Normalized ray gamma of Pi with residual.gamma > tol.

    Maximizes over the cone {B2c^T g <= 0, 1.g <= 1, g >= 0} instead of asking
    the backend for a Farkas certificate.
    """
    started = time.perf_counter()
    n_y = recourse.B2c.shape[1]
    status, value, gamma = max_over_dual(backend, recourse.B2c, np.zeros(n_y), rhs_residual,
                                         sum_bound=1.0, name='ray')
    if status != 'optimal':
        raise BackendError(f"normalized cone LP ended with status {status}")
    if value <= tol:
        raise RayError(f"ray requested for feasible system (best residual.gamma = {value:.3g})")
    return RayResult(gamma=np.clip(gamma, 0.0, None), value=value, wall_time=time.perf_counter() - started)
