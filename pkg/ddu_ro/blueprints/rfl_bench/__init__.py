from ddu_ro.core import SolverBlueprint

rfl_bench_bp = SolverBlueprint("rfl_bench_bp", __name__)

from . import procedures
