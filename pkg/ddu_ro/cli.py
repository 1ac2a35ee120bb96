import functools
import json
import math
import os
import sys

import click
from marshmallow import ValidationError
from rich.table import Table

from . import create_solver
from .blueprints.oracle.generators import pin_upper_corner
from .blueprints.oracle.procedures import SUITES, run_suite, verify_instance
from .blueprints.oracle.schemas import verify_reports_schema
from .blueprints.rfl_bench.procedures import RflConfig, generate_rfl, run_table_experiment
from .errors import DduError
from .extensions import console, init_logging
from .models import relaxation_bound_wR, validate
from .schemas import instance_schema

EXIT_CODES = {
    'optimal': 0,
    'gap-stop': 0,
    'infeasible': 1,
    'u-empty': 1,
    'rc-violated': 1,
    'limit': 2,
}
USAGE_EXIT = 3
ALGORITHMS = ['auto', 'miu', 'nested', 'extended', 'approx', 'oracle']


class DduGroup(click.Group):
    """Commands return their exit code; every usage or IO problem exits with 3."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        if not standalone_mode:
            return super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        try:
            code = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.exceptions.Abort:
            click.echo('Aborted!', err=True)
            sys.exit(USAGE_EXIT)
        except click.ClickException as exc:
            exc.show()
            sys.exit(USAGE_EXIT)
        sys.exit(code or 0)


def exits_on_error(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as e:
            click.echo(json.dumps(e.messages, indent=2), err=True)
            return USAGE_EXIT
        except ValueError as e:
            click.echo(f"error: {e}", err=True)
            return USAGE_EXIT
        except (DduError, OSError) as e:
            click.echo(f"error: {e}", err=True)
            return USAGE_EXIT
    return wrapper


def load_instance(path):
    with open(path) as fh:
        return instance_schema.load(json.load(fh))


def save_instance(instance, path):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w') as fh:
        json.dump(instance_schema.dump(instance), fh, indent=2)


def _num(value):
    if value is None:
        return '-'
    if isinstance(value, float) and not math.isfinite(value):
        return 'inf' if value > 0 else '-inf'
    return f"{value:.6g}" if isinstance(value, float) else str(value)


def _overrides(**options):
    return {key: value for key, value in options.items() if value is not None}


def render_report(report, run_dir=None):
    table = Table(title=f"{report.algorithm} on {report.instance_name}")
    table.add_column('field')
    table.add_column('value')
    for key, value in (('status', report.status), ('stop reason', report.stop_reason),
                       ('LB', report.lower_bound), ('UB', report.upper_bound), ('gap', report.gap),
                       ('iterations', report.iterations), ('inner iterations', report.inner_iterations),
                       ('w_R', report.w_R), ('time (s)', report.timings.get('total'))):
        table.add_row(key, _num(value))
    if report.x is not None:
        table.add_row('x', ' '.join(_num(float(v)) for v in report.x))
    if run_dir:
        table.add_row('run dir', run_dir)
    console.print(table)
    for message in report.diagnostics:
        console.print(f"[yellow]diagnostic:[/yellow] {message}")


@click.group(cls=DduGroup)
@click.option('--config-name', default='DefaultConfig', show_default=True,
              help='Configuration class in config.py.')
@click.option('--config', 'config_file', type=click.Path(exists=True, dir_okay=False),
              help='YAML file overriding configuration keys.')
@click.option('--log-level', default=None, help='Override LOG_LEVEL.')
@click.pass_context
def cli(ctx, config_name, config_file, log_level):
    """Two-stage robust optimization under decision-dependent uncertainty."""
    try:
        solver = create_solver(config_name, config_file)
    except (DduError, OSError) as e:
        raise click.UsageError(str(e))
    if log_level:
        init_logging(log_level.upper())
    ctx.obj = solver


@cli.command()
@click.argument('instance_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--algo', type=click.Choice(ALGORITHMS), default='auto', show_default=True)
@click.option('--time-limit', type=float)
@click.option('--max-iterations', type=int)
@click.option('--tol-gap', type=float)
@click.option('--init', 'init_strategy', type=click.Choice(['wr', 'naive']))
@click.option('--isf-init', type=click.Choice(['naive', 'inheritance']))
@click.option('--vector-slack/--scalar-slack', default=None)
@click.option('--prune-pairs/--keep-pairs', default=None)
@click.option('--run-dir', type=click.Path(file_okay=False), help='Defaults to OUTPUT_DIR/<instance>-<algo>.')
@click.option('--json', 'as_json', is_flag=True, help='Print the report as JSON on stdout.')
@click.pass_obj
@exits_on_error
def solve(solver, instance_path, algo, time_limit, max_iterations, tol_gap, init_strategy, isf_init,
          vector_slack, prune_pairs, run_dir, as_json):
    """Solve an instance and write its run directory."""
    instance = load_instance(instance_path)
    checks = validate(instance)
    if not checks.ok:
        for violation in checks.violations:
            click.echo(violation, err=True)
        return USAGE_EXIT
    overrides = _overrides(time_limit=time_limit, max_iterations=max_iterations, tol_gap=tol_gap,
                           init_strategy=init_strategy, isf_init=isf_init, vector_slack=vector_slack,
                           prune_pairs=prune_pairs)
    name = solver.dispatch(algo, instance)
    run_dir = run_dir or os.path.join(solver.run_config(name, **overrides).output_dir, f"{instance.name}-{name}")
    report = solver.run(algo, instance, run_dir=run_dir, **overrides)
    if as_json:
        click.echo(json.dumps(report.as_dict(), indent=2))
    else:
        render_report(report, run_dir)
    return EXIT_CODES.get(report.status, USAGE_EXIT)


@cli.command(name='validate')
@click.argument('instance_path', type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
@exits_on_error
def validate_command(solver, instance_path):
    """Check an instance file against the schema and the dimensional rules."""
    instance = load_instance(instance_path)
    report = validate(instance)
    if report.ok:
        click.echo(f"{instance.name}: ok ({instance.digest()[:12]})")
        return 0
    for violation in report.violations:
        click.echo(violation, err=True)
    return USAGE_EXIT


@cli.command()
@click.argument('instance_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--algo', type=click.Choice(ALGORITHMS[:-1]), default='auto', show_default=True)
@click.option('--pinned-twin', is_flag=True,
              help='Evaluate the oracle on the upper-corner twin of a box instance (MIP recourse).')
@click.option('--time-limit', type=float)
@click.pass_obj
@exits_on_error
def verify(solver, instance_path, algo, pinned_twin, time_limit):
    """Compare an algorithm against the enumeration oracle."""
    instance = load_instance(instance_path)
    twin = pin_upper_corner(instance) if pinned_twin else None
    result = verify_instance(solver, instance, algo, oracle_instance=twin, **_overrides(time_limit=time_limit))
    table = Table(title=f"verify {result.algorithm} on {result.instance_name}")
    for column in ('status', 'w*', 'LB', 'UB', 'tol', 'agree'):
        table.add_column(column)
    table.add_row(result.status, _num(result.oracle_value), _num(result.lower_bound), _num(result.upper_bound),
                  _num(result.tolerance), 'yes' if result.agree else 'NO')
    console.print(table)
    console.print(result.detail)
    return 0 if result.agree else 1


@cli.command(name='gen-rfl')
@click.option('--variant', type=click.Choice(['L', 'I']), default='L', show_default=True)
@click.option('--ddu', type=click.Choice(['C', 'I']), default='C', show_default=True)
@click.option('--sites', 'n_sites', type=int, default=12, show_default=True)
@click.option('--r', type=float, default=0.0, show_default=True)
@click.option('--k1', type=int)
@click.option('--k2', type=int, default=1, show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--radius', type=float)
@click.option('--grid-size', type=float)
@click.option('--no-coverage', is_flag=True, help='Drop the coverage row (relatively complete recourse may fail).')
@click.option('-o', '--output', 'output', type=click.Path(dir_okay=False), required=True)
@click.pass_obj
@exits_on_error
def gen_rfl(solver, variant, ddu, n_sites, r, k1, k2, seed, radius, grid_size, no_coverage, output):
    """Generate a robust facility-location instance."""
    config = RflConfig(variant=variant, ddu=ddu, n_sites=n_sites, r=r, k1=k1, k2=k2, seed=seed,
                       coverage=not no_coverage, **_overrides(radius=radius, grid_size=grid_size))
    instance = generate_rfl(config)
    save_instance(instance, output)
    click.echo(f"wrote {instance.name} to {output}")
    return 0


@cli.command()
@click.option('--variant', type=click.Choice(['L', 'I']), default='L', show_default=True)
@click.option('--algo-c', type=click.Choice(['miu', 'nested', 'approx']), help='Algorithm for U^C cells.')
@click.option('--algo-i', type=click.Choice(['miu', 'extended', 'approx']), help='Algorithm for U^I cells.')
@click.option('--r', 'r_grid', type=float, multiple=True, help='Repeatable; defaults to 0.1 .. 0.5.')
@click.option('--k2', 'k2_grid', type=int, multiple=True, help='Repeatable; defaults to 1 .. 5.')
@click.option('--sites', 'n_sites', type=int, default=12, show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--workers', type=int)
@click.option('--time-limit', type=float)
@click.option('--init', 'init_strategy', type=click.Choice(['wr', 'naive']))
@click.option('--output-dir', type=click.Path(file_okay=False))
@click.pass_obj
@exits_on_error
def table(solver, variant, algo_c, algo_i, r_grid, k2_grid, n_sites, seed, workers, time_limit, init_strategy,
          output_dir):
    """Run an RFL table experiment (results.csv, results.md, traces and plots)."""
    algorithms = _overrides(C=algo_c, I=algo_i)
    result = run_table_experiment(solver, variant, r_grid or (0.1, 0.2, 0.3, 0.4, 0.5), k2_grid or (1, 2, 3, 4, 5),
                                  algorithms=algorithms, rfl_overrides={'n_sites': n_sites, 'seed': seed},
                                  output_dir=output_dir, workers=workers,
                                  **_overrides(time_limit=time_limit, init_strategy=init_strategy))
    rendered = Table(title=f"RFL-{variant}: U^C by {result.algorithms['C']}, U^I by {result.algorithms['I']}")
    for column in ('r', 'k2', 'U^C UB', 'U^C gap', 'U^C iter', 'U^I UB', 'U^I gap', 'U^I iter', 'diff'):
        rendered.add_column(column)
    for row in result.rows:
        rendered.add_row(_num(row['r']), str(row['k2']), _num(row['C_UB']), _num(row['C_gap']),
                         str(row['C_iterations']), _num(row['I_UB']), _num(row['I_gap']),
                         str(row['I_iterations']), _num(row['rel_diff']))
    console.print(rendered)
    for message in result.warnings:
        console.print(f"[yellow]warning:[/yellow] {message}")
    console.print(f"results in {result.output_dir}")
    return 0


@cli.command()
@click.argument('instance_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--time-limit', type=float)
@click.pass_obj
@exits_on_error
def wr(solver, instance_path, time_limit):
    """Print the relaxation bound w_R."""
    instance = load_instance(instance_path)
    config = solver.run_config('auto', **_overrides(time_limit=time_limit))
    bound = relaxation_bound_wR(instance, config.backend(), config.bigm(), config.time_limit)
    click.echo(json.dumps({'instance': instance.name, 'status': bound.status, 'w_R': bound.value}))
    return EXIT_CODES.get(bound.status, 2)


@cli.command()
@click.option('--kind', type=click.Choice(sorted(SUITES)), required=True)
@click.option('--count', type=int, help='Defaults to the full suite size.')
@click.option('--first-seed', type=int, default=0, show_default=True)
@click.option('--time-limit', type=float)
@click.option('--json', 'as_json', is_flag=True, help='Print the verdicts as JSON on stdout.')
@click.pass_obj
@exits_on_error
def suite(solver, kind, count, first_seed, time_limit, as_json):
    """Run a seeded oracle-agreement suite."""
    rows = run_suite(solver, kind, count, first_seed, **_overrides(time_limit=time_limit))
    agreed = sum(row.agree for row in rows)
    if as_json:
        click.echo(json.dumps(verify_reports_schema.dump(rows), indent=2))
        return 0 if agreed == len(rows) else 1
    rendered = Table(title=f"suite {kind}")
    for column in ('instance', 'status', 'w*', 'UB', 'agree'):
        rendered.add_column(column)
    for row in rows:
        rendered.add_row(row.instance_name, row.status, _num(row.oracle_value), _num(row.upper_bound),
                         'yes' if row.agree else 'NO')
    console.print(rendered)
    console.print(f"{agreed}/{len(rows)} agree")
    return 0 if agreed == len(rows) else 1


def main(argv=None):
    return cli.main(args=argv, prog_name='ddu-ro')
