import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Dict

import flask
import yaml
from marshmallow import ValidationError

from .errors import ConfigError
from .schemas import run_config_schema
from .utils.milp import Backend, BigMConfig

logger = logging.getLogger(__name__)

# dotted YAML keys accepted next to the upper-case class attributes
KEY_ALIASES = {
    'backend.name': 'BACKEND_NAME',
    'backend.threads': 'BACKEND_THREADS',
    'backend.seed': 'BACKEND_SEED',
    'bigm.default': 'BIG_M',
    'tol.feas': 'TOL_FEAS',
    'tol.gap': 'TOL_GAP',
    'limits.time': 'TIME_LIMIT',
    'limits.iterations': 'MAX_ITERATIONS',
    'init': 'INIT_STRATEGY',
}


class Config(flask.Config):
    """flask.Config that also reads dotted YAML overlays into the upper-case keys."""

    def from_object(self, obj):
        try:
            super().from_object(obj)
        except ImportError as exc:
            raise ConfigError(f"unknown configuration '{obj}'") from exc

    def from_yaml(self, path):
        return self.from_file(os.path.abspath(path), load=yaml.safe_load)

    def from_mapping(self, mapping=None, **kwargs):
        self._merge({**(mapping or {}), **kwargs})
        return True

    def _merge(self, data, prefix=''):
        for key, value in data.items():
            dotted = f"{prefix}{key}".lower()
            if isinstance(value, dict) and dotted not in ('bigm.scopes', 'big_m_scopes'):
                self._merge(value, f"{dotted}.")
                continue
            upper = KEY_ALIASES.get(dotted, dotted.replace('.', '_').upper())
            if dotted == 'bigm.scopes':
                upper = 'BIG_M_SCOPES'
            if upper not in self:
                raise ConfigError(f"unknown configuration key '{key}'")
            self[upper] = value


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = 'auto'
    tol_gap: float = 0.005
    tol_feas: float = 1e-6
    time_limit: float = 3600.0
    max_iterations: int = 50
    max_inner_iterations: int = 200
    big_m: float = 1e4
    big_m_scopes: Dict[str, float] = field(default_factory=dict)
    backend_name: str = 'CBC'
    backend_threads: int = 1
    backend_seed: int = 0
    integer_tol: float = 1e-6
    mip_gap: float = 1e-6
    init_strategy: str = 'wr'
    isf_init: str = 'naive'
    vector_slack: bool = False
    prune_pairs: bool = False
    oracle_budget: int = 100000
    workers: int = 1
    output_dir: str = 'runs'
    log_level: str = 'INFO'

    @classmethod
    def from_mapping(cls, mapping, **overrides):
        values = {name: mapping[name.upper()] for name in cls.__dataclass_fields__ if name.upper() in mapping}
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            values = run_config_schema.load(values)
        except ValidationError as e:
            raise ConfigError(f"invalid run configuration: {e.messages}") from e
        return cls(**values)

    def bigm(self):
        return BigMConfig(self.big_m, dict(self.big_m_scopes))

    def backend(self):
        return Backend.from_config(self)

    def gap_closed(self, lb, ub):
        if not (math.isfinite(lb) and math.isfinite(ub)):
            return False
        return abs(ub - lb) <= self.tol_gap * max(1.0, abs(ub))

    def as_dict(self):
        return asdict(self)


class SolverBlueprint:
    """A named group of algorithms and instance generators registered on a Solver."""

    def __init__(self, name, import_name):
        self.name = name
        self.import_name = import_name
        self.algorithms = {}
        self.generators = {}

    def algorithm(self, name):
        def register(fn):
            self.algorithms[name] = fn
            return fn
        return register

    def generator(self, name):
        def register(fn):
            self.generators[name] = fn
            return fn
        return register


class Solver:
    def __init__(self, import_name):
        self.import_name = import_name
        self.config = Config(os.getcwd())
        self.algorithms = {}
        self.generators = {}
        self.blueprints = {}

    def register_blueprint(self, blueprint, prefix=None):
        self.blueprints[prefix or blueprint.name] = blueprint
        for registry, entries in ((self.algorithms, blueprint.algorithms), (self.generators, blueprint.generators)):
            for name, fn in entries.items():
                if name in registry:
                    raise ConfigError(f"'{name}' registered twice")
                registry[name] = fn

    def run_config(self, algorithm='auto', **overrides):
        return RunConfig.from_mapping(self.config, algorithm=algorithm, **overrides)

    def dispatch(self, algorithm, instance):
        if algorithm != 'auto':
            return algorithm
        if instance.recourse.m_y == 0:
            return 'miu'
        if instance.ddu.m_u == 0:
            return 'nested'
        return 'extended'

    def run(self, algorithm, instance, run_dir=None, **overrides):
        from .utils.ledger import TraceWriter

        name = self.dispatch(algorithm, instance)
        if name not in self.algorithms:
            raise ConfigError(f"unknown algorithm '{algorithm}'")
        config = self.run_config(name, **overrides)
        trace = TraceWriter(os.path.join(run_dir, 'trace.jsonl') if run_dir else None)
        if run_dir:
            os.makedirs(run_dir, exist_ok=True)
            with open(os.path.join(run_dir, 'config.json'), 'w') as fh:
                json.dump(run_config_schema.dump(config), fh, indent=2)
            with open(os.path.join(run_dir, 'instance.sha256'), 'w') as fh:
                fh.write(instance.digest() + '\n')
        logger.info("running %s on %s", name, instance.name)
        try:
            report = self.algorithms[name](instance, config, backend=config.backend(), trace=trace)
        finally:
            trace.close()
        report.config = run_config_schema.dump(config)
        report.instance_hash = instance.digest()
        if run_dir:
            with open(os.path.join(run_dir, 'report.json'), 'w') as fh:
                json.dump(report.as_dict(), fh, indent=2)
        return report
