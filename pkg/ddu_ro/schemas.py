import math

import numpy as np
from marshmallow import Schema, ValidationError, fields, post_load, validates_schema, validate

from .models import DduSet, FirstStageSet, ProblemInstance, RecourseSpec


class Matrix(fields.Field):
    """Dense row-major array of arrays <-> 2-D float ndarray."""

    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        return np.asarray(value, dtype=float).tolist()

    def _deserialize(self, value, attr, data, **kwargs):
        if not isinstance(value, list) or any(not isinstance(row, list) for row in value):
            raise ValidationError("expected an array of arrays")
        widths = {len(row) for row in value}
        if len(widths) > 1:
            first = len(value[0])
            bad = next(i for i, row in enumerate(value) if len(row) != first)
            raise ValidationError(f"ragged matrix: row {bad} has length {len(value[bad])}, expected {first}")
        try:
            return np.array(value, dtype=float).reshape(len(value), widths.pop() if widths else 0)
        except (TypeError, ValueError):
            raise ValidationError("matrix entries must be numbers")


class Tensor(fields.Field):
    """Array of matrices (F_d_lin indexed by first-stage variable)."""

    def _serialize(self, value, attr, obj, **kwargs):
        return np.asarray(value, dtype=float).tolist()

    def _deserialize(self, value, attr, data, **kwargs):
        if not isinstance(value, list):
            raise ValidationError("expected an array of matrices")
        mats = [Matrix()._deserialize(m, attr, data) for m in value]
        shapes = {m.shape for m in mats}
        if len(shapes) > 1:
            raise ValidationError(f"F_d_lin matrices differ in shape: {sorted(shapes)}")
        if not mats:
            return np.zeros((0, 0, 0))
        return np.stack(mats)


class Vector(fields.Field):
    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        return np.asarray(value, dtype=float).tolist()

    def _deserialize(self, value, attr, data, **kwargs):
        if not isinstance(value, list):
            raise ValidationError("expected an array of numbers")
        try:
            return np.array(value, dtype=float).reshape(-1)
        except (TypeError, ValueError):
            raise ValidationError("vector entries must be numbers")


def _fit(matrix, rows, cols):
    """Empty JSON arrays carry no shape; restore it from the declared dimensions."""
    if matrix.size == 0:
        return np.zeros((rows, cols))
    return matrix


class FirstStageSchema(Schema):
    n_x = fields.Integer(required=True, validate=validate.Range(min=0))
    m_x = fields.Integer(required=True, validate=validate.Range(min=0))
    A = Matrix(required=True)
    b = Vector(required=True)
    integer_bounds = Matrix(required=True)

    @post_load
    def make_first_stage(self, data, **kwargs):
        data['A'] = _fit(data['A'], len(data['b']), data['n_x'] + data['m_x'])
        data['integer_bounds'] = _fit(data['integer_bounds'], data['m_x'], 2)
        return FirstStageSet(**data)


class PureConstraintsSchema(Schema):
    A = Matrix(required=True)
    b = Vector(required=True)


class DduSchema(Schema):
    n_u = fields.Integer(required=True, validate=validate.Range(min=0))
    m_u = fields.Integer(required=True, validate=validate.Range(min=0))
    F_c = Matrix(required=True)
    F_d0 = Matrix(required=True)
    F_d_lin = Tensor(load_default=list)
    G = Matrix(required=True)
    h = Vector(required=True)
    u_d_bounds = Matrix(required=True)
    u_d_pure_constraints = fields.Nested(PureConstraintsSchema, allow_none=True, load_default=None)

    @post_load
    def make_ddu(self, data, **kwargs):
        mu_u = len(data['h'])
        pure = data.pop('u_d_pure_constraints')
        F_d_lin = data['F_d_lin']
        if isinstance(F_d_lin, list):
            F_d_lin = np.zeros((0, mu_u, data['m_u']))
        elif F_d_lin.size == 0:
            F_d_lin = np.zeros((F_d_lin.shape[0], mu_u, data['m_u']))
        data['F_d_lin'] = F_d_lin
        data['F_c'] = _fit(data['F_c'], mu_u, data['n_u'])
        data['F_d0'] = _fit(data['F_d0'], mu_u, data['m_u'])
        data['u_d_bounds'] = _fit(data['u_d_bounds'], data['m_u'], 2)
        if pure:
            data['pure_A'] = _fit(pure['A'], len(pure['b']), data['m_u'])
            data['pure_b'] = pure['b']
        return data

    @staticmethod
    def dump_pure(ddu):
        if len(ddu.pure_b) == 0:
            return None
        return {'A': ddu.pure_A.tolist(), 'b': ddu.pure_b.tolist()}


class RecourseSchema(Schema):
    n_y = fields.Integer(required=True, validate=validate.Range(min=0))
    m_y = fields.Integer(required=True, validate=validate.Range(min=0))
    B1 = Matrix(required=True)
    B2c = Matrix(required=True)
    B2d = Matrix(required=True)
    E_c = Matrix(required=True)
    E_d = Matrix(required=True)
    d = Vector(required=True)
    c2c = Vector(required=True)
    c2d = Vector(required=True)
    y_d_bounds = Matrix(required=True)


class InstanceSchema(Schema):
    first_stage = fields.Nested(FirstStageSchema, required=True)
    ddu = fields.Nested(DduSchema, required=True)
    recourse = fields.Nested(RecourseSchema, required=True)
    c1 = Vector(required=True)
    # name, provenance and any generator settings
    meta = fields.Dict(keys=fields.String(), load_default=lambda: {'name': 'unnamed', 'provenance': 'user'})

    @validates_schema
    def check_recourse_rows(self, data, **kwargs):
        rec = data.get('recourse')
        if not rec:
            return
        rows = len(rec['d'])
        for name in ('B1', 'B2c', 'B2d', 'E_c', 'E_d'):
            if rec[name].size and rec[name].shape[0] != rows:
                raise ValidationError({'recourse': {name: [f"has {rec[name].shape[0]} rows, d has {rows}"]}})

    @post_load
    def make_instance(self, data, **kwargs):
        fs = data['first_stage']
        ddu_data = data['ddu']
        rec = dict(data['recourse'])
        mu_y = len(rec['d'])
        nx = fs.n_x + fs.m_x
        rec['B1'] = _fit(rec['B1'], mu_y, nx)
        rec['B2c'] = _fit(rec['B2c'], mu_y, rec['n_y'])
        rec['B2d'] = _fit(rec['B2d'], mu_y, rec['m_y'])
        rec['E_c'] = _fit(rec['E_c'], mu_y, ddu_data['n_u'])
        rec['E_d'] = _fit(rec['E_d'], mu_y, ddu_data['m_u'])
        rec['y_d_bounds'] = _fit(rec['y_d_bounds'], rec['m_y'], 2)
        ddu_data['G'] = _fit(ddu_data['G'], len(ddu_data['h']), nx)
        return ProblemInstance(first_stage=fs, ddu=DduSet(**ddu_data), recourse=RecourseSpec(**rec),
                               c1=data['c1'], meta=data['meta'])

    def dump(self, obj, **kwargs):
        payload = super().dump(obj, **kwargs)
        payload['ddu']['u_d_pure_constraints'] = DduSchema.dump_pure(obj.ddu)
        return payload


def _finite(value):
    if value is None or not math.isfinite(value):
        return None
    return value


class TraceRecordSchema(Schema):
    t = fields.Integer()
    LB = fields.Function(lambda r: _finite(r.LB))
    UB = fields.Function(lambda r: _finite(r.UB))
    gap = fields.Function(lambda r: _finite(r.gap))
    cut_kind = fields.String(allow_none=True)
    u_d = fields.List(fields.Float(), allow_none=True)
    eta_f = fields.Function(lambda r: _finite(r.eta_f))
    eta_o = fields.Function(lambda r: _finite(r.eta_o))
    subproblem_times = fields.Dict(keys=fields.String(), values=fields.Float())
    wall_time = fields.Float()
    extra = fields.Dict()

    def dump(self, obj, **kwargs):
        payload = super().dump(obj, **kwargs)
        if isinstance(payload, list):
            for item in payload:
                item.update(item.pop('extra', None) or {})
            return payload
        extra = payload.pop('extra', None) or {}
        payload.update(extra)
        return payload


class SolveReportSchema(Schema):
    algorithm = fields.String()
    status = fields.String()
    stop_reason = fields.String(allow_none=True)
    x = Vector(allow_none=True)
    value = fields.Function(lambda r: _finite(r.value))
    lower_bound = fields.Function(lambda r: _finite(r.lower_bound))
    upper_bound = fields.Function(lambda r: _finite(r.upper_bound))
    gap = fields.Function(lambda r: _finite(r.gap))
    iterations = fields.Integer()
    inner_iterations = fields.Integer()
    cuts = fields.Method('dump_cuts')
    ledger = fields.Method('dump_ledger')
    timings = fields.Dict(keys=fields.String(), values=fields.Float())
    diagnostics = fields.List(fields.String())
    w_R = fields.Function(lambda r: _finite(r.w_R))
    complexity = fields.Dict()
    config = fields.Dict()
    instance_name = fields.String()
    instance_hash = fields.String()
    rc_probe = fields.Function(lambda r: _finite(getattr(r, 'rc_probe', None)))

    def dump_cuts(self, report):
        return [cut.as_dict() for cut in report.cuts]

    def dump_ledger(self, report):
        return trace_records_schema.dump(report.ledger.records)


class RunConfigSchema(Schema):
    algorithm = fields.String(validate=validate.OneOf(['auto', 'miu', 'nested', 'extended', 'approx', 'oracle']))
    tol_gap = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    tol_feas = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    time_limit = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    max_iterations = fields.Integer(validate=validate.Range(min=1))
    max_inner_iterations = fields.Integer(validate=validate.Range(min=1))
    big_m = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    big_m_scopes = fields.Dict(keys=fields.String(validate=validate.OneOf(
        ['indicator', 'complementarity', 'penalty', 'dual', 'eta_floor'])), values=fields.Float())
    backend_name = fields.String()
    backend_threads = fields.Integer(validate=validate.Range(min=1))
    backend_seed = fields.Integer()
    integer_tol = fields.Float(validate=validate.Range(min=0))
    mip_gap = fields.Float(validate=validate.Range(min=0))
    init_strategy = fields.String(validate=validate.OneOf(['wr', 'naive']))
    isf_init = fields.String(validate=validate.OneOf(['naive', 'inheritance']))
    vector_slack = fields.Boolean()
    prune_pairs = fields.Boolean()
    oracle_budget = fields.Integer(validate=validate.Range(min=1))
    workers = fields.Integer(validate=validate.Range(min=1))
    output_dir = fields.String()
    log_level = fields.String()


instance_schema = InstanceSchema()
trace_record_schema = TraceRecordSchema()
trace_records_schema = TraceRecordSchema(many=True)
solve_report_schema = SolveReportSchema()
run_config_schema = RunConfigSchema()
