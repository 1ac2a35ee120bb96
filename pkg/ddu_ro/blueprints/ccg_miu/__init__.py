from ddu_ro.core import SolverBlueprint

ccg_miu_bp = SolverBlueprint("ccg_miu_bp", __name__)

from . import procedures
