from marshmallow import Schema, fields

from ddu_ro.schemas import Vector, _finite


class OracleResultSchema(Schema):
    kind = fields.String()
    w_star = fields.Function(lambda r: _finite(r.w_star))
    x_star = Vector(allow_none=True)
    evaluated = fields.Integer()
    skipped = fields.Integer()
    wall_time = fields.Float()


class VerifyReportSchema(Schema):
    instance_name = fields.String()
    algorithm = fields.String()
    status = fields.String()
    oracle_value = fields.Function(lambda r: _finite(r.oracle_value))
    lower_bound = fields.Function(lambda r: _finite(r.lower_bound))
    upper_bound = fields.Function(lambda r: _finite(r.upper_bound))
    tolerance = fields.Float()
    agree = fields.Boolean()
    detail = fields.String()


oracle_result_schema = OracleResultSchema()
verify_report_schema = VerifyReportSchema()
verify_reports_schema = VerifyReportSchema(many=True)
