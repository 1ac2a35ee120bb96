import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

logger = logging.getLogger(__name__)


def vectors_close(a, b, tol=1e-6):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a.shape == b.shape and (a.size == 0 or float(np.max(np.abs(a - b))) <= tol)


def relative_gap(lb, ub):
    if not (math.isfinite(lb) and math.isfinite(ub)):
        return math.inf
    return abs(ub - lb) / max(1.0, abs(ub))


@dataclass
class IterationRecord:
    t: int
    LB: float
    UB: float
    gap: float
    cut_kind: Optional[str] = None
    u_d: Optional[List[float]] = None
    eta_f: Optional[float] = None
    eta_o: Optional[float] = None
    subproblem_times: Dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0
    extra: Dict[str, Any] = field(default_factory=dict)


class BoundsLedger:
    """LB/UB history; LB only rises and UB only falls."""

    def __init__(self):
        self.lb = -math.inf
        self.ub = math.inf
        self.records = []
        self.started = time.perf_counter()

    def update_lb(self, value):
        if value is not None and value > self.lb:
            self.lb = float(value)
        return self.lb

    def update_ub(self, value):
        if value is not None and value < self.ub:
            self.ub = float(value)
            return True
        return False

    @property
    def gap(self):
        return relative_gap(self.lb, self.ub)

    def elapsed(self):
        return time.perf_counter() - self.started

    def append(self, t, **fields):
        record = IterationRecord(t=t, LB=self.lb, UB=self.ub, gap=self.gap,
                                 wall_time=self.elapsed(), **fields)
        self.records.append(record)
        return record

    def violations(self, tol=1e-6):
        found = []
        for prev, cur in zip(self.records, self.records[1:]):
            if cur.LB < prev.LB - tol:
                found.append(f"LB decreased at t={cur.t}")
            if cur.UB > prev.UB + tol:
                found.append(f"UB increased at t={cur.t}")
        for rec in self.records:
            if math.isfinite(rec.UB) and rec.LB > rec.UB + tol * max(1.0, abs(rec.UB)):
                found.append(f"LB above UB at t={rec.t}")
        return found


class CutLedger:
    """No-repeat ledger: every cutting-set identity is stored once."""

    def __init__(self, tol=1e-6):
        self.tol = tol
        self.entries = []
        self.repeats = []

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def find(self, record):
        for entry in self.entries:
            if entry.same_as(record, self.tol):
                return entry
        return None

    def add(self, record):
        if self.find(record) is not None:
            self.repeats.append(record)
            logger.warning("repeated cutting set at iteration %s (%s)", record.iteration, record.origin)
            return False
        self.entries.append(record)
        return True

    def distinct_duals(self):
        duals = []
        for entry in self.entries:
            for vec in entry.dual_vectors():
                if not any(vectors_close(vec, seen, self.tol) for seen in duals):
                    duals.append(vec)
        return len(duals)


def iteration_cap_check(u_d_count, distinct_duals, iterations):
    """Outer iterations never exceed |U_d| * |distinct duals| + 1; unknown |U_d| skips the check."""
    bound = None if u_d_count is None else u_d_count * max(1, distinct_duals) + 1
    return {'u_d_count': u_d_count, 'distinct_duals': distinct_duals,
            'iterations': iterations, 'bound': bound,
            'within_bound': None if bound is None else iterations <= bound}


@dataclass
class SolveReport:
    algorithm: str
    status: str
    stop_reason: Optional[str] = None
    x: Optional[np.ndarray] = None
    lower_bound: float = -math.inf
    upper_bound: float = math.inf
    iterations: int = 0
    inner_iterations: int = 0
    cuts: List[Any] = field(default_factory=list)
    ledger: BoundsLedger = field(default_factory=BoundsLedger)
    timings: Dict[str, float] = field(default_factory=dict)
    diagnostics: List[str] = field(default_factory=list)
    w_R: Optional[float] = None
    complexity: Dict[str, Any] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)
    instance_name: str = ''
    instance_hash: str = ''

    @property
    def value(self):
        return self.upper_bound

    @property
    def gap(self):
        return relative_gap(self.lower_bound, self.upper_bound)

    def add_time(self, key, seconds):
        self.timings[key] = self.timings.get(key, 0.0) + seconds

    def as_dict(self):
        from ddu_ro.schemas import solve_report_schema
        return solve_report_schema.dump(self)


class TraceWriter:
    """Append-only JSONL trace; a writer without a path drops records."""

    def __init__(self, path=None):
        self.path = path
        self._fh = None
        self.records = []

    def write(self, record):
        from ddu_ro.schemas import trace_record_schema
        payload = trace_record_schema.dump(record) if isinstance(record, IterationRecord) else record
        self.records.append(payload)
        if self.path is None:
            return
        if self._fh is None:
            self._fh = open(self.path, 'w')
        self._fh.write(json.dumps(payload) + '\n')
        self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None
