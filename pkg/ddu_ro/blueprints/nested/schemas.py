from marshmallow import Schema, fields

from ddu_ro.schemas import Vector, _finite


class PairSchema(Schema):
    y_d = Vector()
    pi = Vector()


class YdPiSetSchema(Schema):
    pairs = fields.Method('dump_pairs')
    origin = fields.String()
    iteration = fields.Integer()

    def dump_pairs(self, obj):
        return pair_schema.dump([{'y_d': y_d, 'pi': pi} for y_d, pi in obj.pairs], many=True)


class InnerStateSchema(Schema):
    yd = fields.List(Vector(), data_key='Yd_hat')
    lb = fields.Function(lambda s: _finite(s.lb))
    ub = fields.Function(lambda s: _finite(s.ub))
    phase = fields.String()
    closed_on = fields.String(allow_none=True)
    iterations = fields.Integer()


pair_schema = PairSchema()
yd_pi_set_schema = YdPiSetSchema()
inner_state_schema = InnerStateSchema()
