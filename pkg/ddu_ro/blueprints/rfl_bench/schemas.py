from marshmallow import Schema, fields, post_load, validate

from ddu_ro.schemas import _finite


def _pair(**kwargs):
    return fields.Tuple((fields.Float(), fields.Float()), **kwargs)


class RflConfigSchema(Schema):
    variant = fields.String(validate=validate.OneOf(['L', 'I']))
    ddu = fields.String(validate=validate.OneOf(['C', 'I']))
    n_sites = fields.Integer(validate=validate.Range(min=1))
    r = fields.Float(validate=validate.Range(min=0))
    k1 = fields.Integer(allow_none=True)
    k2 = fields.Integer(validate=validate.Range(min=0))
    seed = fields.Integer()
    radius = fields.Float(validate=validate.Range(min=0))
    grid_size = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    demand_range = _pair()
    f_range = _pair()
    a_range = _pair()
    cap_fractions = _pair()
    zeta_fractions = _pair()
    alpha = fields.Float()
    rho = fields.Float()
    coverage = fields.Boolean()
    h_range = _pair()
    temp_cost_factor = fields.Float()
    distance_cost = fields.Float()

    @post_load
    def make_config(self, data, **kwargs):
        from .procedures import RflConfig
        return RflConfig(**data)


class CellResultSchema(Schema):
    cell = fields.String()
    ddu = fields.String()
    algorithm = fields.String()
    status = fields.String()
    LB = fields.Function(lambda c: _finite(c['LB']))
    UB = fields.Function(lambda c: _finite(c['UB']))
    gap = fields.Function(lambda c: _finite(c['gap']))
    iterations = fields.Integer()
    inner_iterations = fields.Integer()
    time = fields.Float()
    error = fields.String(allow_none=True)


class ResultsTableSchema(Schema):
    variant = fields.String()
    algorithms = fields.Dict(keys=fields.String(), values=fields.String())
    rows = fields.List(fields.Dict())
    warnings = fields.List(fields.String())
    output_dir = fields.String(allow_none=True)


rfl_config_schema = RflConfigSchema()
cell_results_schema = CellResultSchema(many=True)
results_table_schema = ResultsTableSchema()
