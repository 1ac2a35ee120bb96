from ddu_ro.core import SolverBlueprint

general_bp = SolverBlueprint("general_bp", __name__)

from . import procedures
