import os

class DefaultConfig:
    TOL_GAP = 0.005
    TOL_FEAS = 1e-6
    TIME_LIMIT = 3600.0
    MAX_ITERATIONS = 50
    MAX_INNER_ITERATIONS = 200
    BIG_M = 1e4
    BIG_M_SCOPES = {}
    BACKEND_NAME = 'CBC'
    BACKEND_THREADS = 1
    BACKEND_SEED = 0
    INTEGER_TOL = 1e-6
    MIP_GAP = 1e-6
    INIT_STRATEGY = 'wr'
    ISF_INIT = 'naive'
    VECTOR_SLACK = False
    PRUNE_PAIRS = False
    ORACLE_BUDGET = 100000
    WORKERS = 1
    OUTPUT_DIR = os.environ.get('DDU_RO_OUTPUT_DIR') or 'runs'
    LOG_LEVEL = 'INFO'

class BenchmarkConfig(DefaultConfig):
    # full-size facility-location tables
    TIME_LIMIT = 3600.0
    WORKERS = int(os.environ.get('DDU_RO_WORKERS', 1))

class TestingConfig(DefaultConfig):
    TOL_GAP = 1e-6
    TOL_FEAS = 1e-7
    TIME_LIMIT = 300.0
    MAX_ITERATIONS = 100
    BIG_M = 1e3
    INTEGER_TOL = 1e-8
    MIP_GAP = 1e-9
    OUTPUT_DIR = 'testing_runs'
    LOG_LEVEL = 'WARNING'
