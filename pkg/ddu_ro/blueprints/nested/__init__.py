from ddu_ro.core import SolverBlueprint

nested_bp = SolverBlueprint("nested_bp", __name__)

from . import procedures
