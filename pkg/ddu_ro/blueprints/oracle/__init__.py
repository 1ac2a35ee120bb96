from ddu_ro.core import SolverBlueprint

oracle_bp = SolverBlueprint("oracle_bp", __name__)

from . import procedures
