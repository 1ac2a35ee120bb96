from marshmallow import Schema, fields

from ddu_ro.blueprints.nested.schemas import YdPiSetSchema
from ddu_ro.schemas import Vector


class MixedCutRecordSchema(Schema):
    u_d = Vector()
    pairs = fields.Nested(YdPiSetSchema)
    origin = fields.String()
    iteration = fields.Integer()


mixed_cut_record_schema = MixedCutRecordSchema()
