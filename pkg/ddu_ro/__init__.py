from .core import Solver
from .extensions import init_logging
from .blueprints.ccg_miu import ccg_miu_bp
from .blueprints.nested import nested_bp
from .blueprints.general import general_bp
from .blueprints.oracle import oracle_bp
from .blueprints.rfl_bench import rfl_bench_bp


def create_solver(config_name='DefaultConfig', config_file=None):
    solver = Solver(__name__)
    solver.config.from_object(f'config.{config_name}')
    if config_file:
        solver.config.from_yaml(config_file)

    init_logging(solver.config['LOG_LEVEL'])

    solver.register_blueprint(ccg_miu_bp)
    solver.register_blueprint(nested_bp)
    solver.register_blueprint(general_bp)
    solver.register_blueprint(oracle_bp)
    solver.register_blueprint(rfl_bench_bp)

    return solver
