from marshmallow import Schema, fields

from ddu_ro.schemas import Vector


class CutRecordMIUSchema(Schema):
    u_d = Vector()
    dual = Vector()
    origin = fields.String()
    iteration = fields.Integer()


class SubproblemResultSchema(Schema):
    status = fields.String()
    value = fields.Float(allow_none=True)
    u_c = fields.Function(lambda r: None if r.scenario is None else r.scenario.u_c.tolist())
    u_d = fields.Function(lambda r: None if r.scenario is None else r.scenario.u_d.tolist())
    dual = Vector(allow_none=True)
    wall_time = fields.Float()


cut_record_schema = CutRecordMIUSchema()
subproblem_result_schema = SubproblemResultSchema()
