"""
Command line: shotnoise simulate|fluid|rate|mc|verify --config FILE [--seed N] [--out DIR] [--threads N]

Seed precedence: --seed, then the config's "seed", then SHOTNOISE_DEFAULT_SEED.
Exit codes: 0 success, 1 internal error or failed verification, 2 malformed
config or invalid argument, 3 non-convergence, 4 infeasible rate constraint.
"""

import json
import time
from contextlib import contextmanager
from pathlib import Path as FilePath
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import click
import numpy as np
import structlog
from pydantic import ValidationError

from config import Config, get_config_name
from shotnoise import __version__, create_app
from shotnoise.errors import ConfigError, ShotNoiseError
from shotnoise.models.catalogue import build_model, load_model
from shotnoise.models.control import Control
from shotnoise.models.documents import ControlDocument, FluidParams, ModelDocument, RunConfig, VerifyParams
from shotnoise.models.results import RareEvent
from shotnoise.services.export_service import ExportService
from shotnoise.services.fluid_service import FluidService, cost_lt
from shotnoise.services.model_service import ModelService
from shotnoise.services.monte_carlo_service import MonteCarloService
from shotnoise.services.rate_service import PathConstraint, RateService, TerminalConstraint
from shotnoise.services.simulation_service import SimulationService
from shotnoise.services.verification_service import VerificationService

logger = structlog.get_logger(__name__)

ERROR_HANDLERS: List[Tuple[type, Callable[[Exception], int]]] = []


def errorhandler(error_type: type):
    def decorator(fn: Callable[[Exception], int]):
        ERROR_HANDLERS.append((error_type, fn))
        return fn
    return decorator


def register_error_handlers() -> None:
    """Register exception -> exit code handlers, most specific first"""
    ERROR_HANDLERS.clear()

    @errorhandler(ShotNoiseError)
    def library_error(error: ShotNoiseError) -> int:
        logger.error("Command failed", error=type(error).__name__, message=error.message, **error.details)
        click.echo(f"Error: {error.message}", err=True)
        return error.exit_code

    @errorhandler(click.UsageError)
    def usage_error(error: click.UsageError) -> int:
        click.echo(f"Error: {error.format_message()}", err=True)
        return 2

    @errorhandler(click.ClickException)
    def click_error(error: click.ClickException) -> int:
        click.echo(f"Error: {error.format_message()}", err=True)
        return error.exit_code

    @errorhandler(click.Abort)
    def aborted(error: click.Abort) -> int:
        click.echo("Aborted!", err=True)
        return 1

    @errorhandler(Exception)
    def unhandled(error: Exception) -> int:
        logger.exception("Unhandled exception occurred")
        click.echo(f"Internal error: {error}", err=True)
        return 1


def handle_error(error: Exception) -> int:
    if not ERROR_HANDLERS:
        register_error_handlers()
    for error_type, handler in ERROR_HANDLERS:
        if isinstance(error, error_type):
            return handler(error)
    return 1


@contextmanager
def error_boundary(ctx: click.Context):
    """Turn library exceptions raised by a command into its exit code"""
    try:
        yield
    except (click.exceptions.Exit, click.ClickException, click.Abort):
        raise
    except Exception as error:
        ctx.exit(handle_error(error))


class RunContext:
    """A parsed run config with the CLI overrides applied"""

    def __init__(self, settings: Config, config_path: str, command: str, seed: Optional[int],
                 out: Optional[str], threads: Optional[int]):
        self.settings = settings
        self.command = command
        self.config_path = FilePath(config_path)
        self.inputs: Dict[str, bytes] = {}
        self.started = time.perf_counter()

        if not self.config_path.is_file():
            raise ConfigError(f"config file not found: {self.config_path}")
        raw = self.config_path.read_bytes()
        self.inputs['config'] = raw
        try:
            self.config = RunConfig.model_validate_json(raw)
        except ValidationError as e:
            raise ConfigError(f"invalid run config {self.config_path}: {e}")
        if self.config.command is not None and self.config.command != command:
            raise ConfigError(f"config is for command {self.config.command!r}, not {command!r}")

        self.seed = seed if seed is not None else (
            self.config.seed if self.config.seed is not None else settings.DEFAULT_SEED)
        self.threads = threads or self.config.threads or settings.THREADS
        self.out_dir = FilePath(out or self.config.out or FilePath('out') / command)
        self.export = ExportService(self.out_dir)

    def resolve(self, reference: str) -> FilePath:
        path = FilePath(reference)
        return path if path.is_absolute() else self.config_path.parent / path

    def model(self, validate: bool = True):
        document = self.config.model
        if document is None:
            raise ConfigError("run config needs a 'model'")
        if isinstance(document, ModelDocument):
            model = build_model(document)
        else:
            path = self.resolve(document)
            model = load_model(path)
            self.inputs['model'] = path.read_bytes()
        if validate:
            report = ModelService(self.settings).validate_model(model)
            self.export.write_json(report.to_dict(), 'validation.json')
            if not report.accepted:
                failed = [check.condition for check in report.checks if not check.passed]
                raise ConfigError(f"model violates shot conditions {failed}", {'failed': failed})
        return model

    def control(self, reference, tag: str) -> Optional[Control]:
        if reference is None:
            return None
        if isinstance(reference, ControlDocument):
            return Control(reference.time_grid, reference.values, tag=tag)
        path = self.resolve(reference)
        if not path.is_file():
            raise ConfigError(f"control file not found: {path}")
        text = path.read_bytes()
        self.inputs[f"control:{reference}"] = text
        try:
            return Control.from_json(text.decode(), tag=tag)
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ConfigError(f"malformed control file {path}: {e}")

    def section(self, name: str, default: Any = None):
        params = getattr(self.config, name)
        if params is None:
            if default is None:
                raise ConfigError(f"run config needs a {name!r} section")
            return default
        return params

    def finish(self) -> None:
        config = self.config.model_dump(mode='json')
        config.update({'seed': self.seed, 'threads': self.threads, 'out': str(self.out_dir)})
        self.export.write_manifest(self.command, config, self.inputs, self.seed, self.threads,
                                   time.perf_counter() - self.started)


def run_options(fn):
    fn = click.option('--threads', type=click.IntRange(min=1), default=None, help='Worker cap for replications')(fn)
    fn = click.option('--out', type=click.Path(file_okay=False), default=None, help='Artifact directory')(fn)
    fn = click.option('--seed', type=click.IntRange(0, 2**64 - 1), default=None, help='Overrides the config seed')(fn)
    fn = click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
                      help='Run config JSON')(fn)
    return click.pass_context(fn)


def _open(ctx: click.Context, command: str, config_path: str, seed, out, threads) -> RunContext:
    return RunContext(ctx.obj, config_path, command, seed, out, threads)


@click.group()
@click.version_option(__version__, prog_name='shotnoise')
@click.pass_context
def shotnoise(ctx: click.Context):
    """Shot-noise large deviations: simulation, fluid limits, rate functions and rare events"""
    if not isinstance(ctx.obj, Config):
        ctx.obj = create_app(get_config_name())


@shotnoise.command()
@run_options
def simulate(ctx, config_path, seed, out, threads):
    """Simulate one scaled path X^eps; writes path.csv and events.csv"""
    with error_boundary(ctx):
        run = _open(ctx, 'simulate', config_path, seed, out, threads)
        params = run.section('simulate')
        model = run.model()
        control = run.control(params.control, 'config')
        service = SimulationService(run.settings)

        events = service.simulate_prm(model.mark_space, model.horizon, params.epsilon, control,
                                      run.seed, params.replication)
        grid = None if params.grid_points is None else np.linspace(0.0, model.horizon, params.grid_points + 1)
        path = service.evolve_scaled_path(model, events, grid)

        run.export.write_path(path)
        run.export.write_events(events)
        run.export.write_json({'events': len(events), 'terminal': path.terminal.tolist(),
                               'epsilon': params.epsilon}, 'simulate.json')
        run.finish()
        click.echo(f"{len(events)} events, X(T) = {path.terminal.tolist()} -> {run.out_dir}")
    return 0


@shotnoise.command()
@run_options
def fluid(ctx, config_path, seed, out, threads):
    """Solve the controlled fluid equation; writes fluid.csv"""
    with error_boundary(ctx):
        run = _open(ctx, 'fluid', config_path, seed, out, threads)
        params = run.section('fluid', FluidParams())
        model = run.model()
        control = run.control(params.control, 'config') or Control.unit(model.horizon, len(model.atoms))
        service = FluidService(run.settings)

        grid = np.linspace(0.0, model.horizon, params.grid_points + 1)
        solution = service.solve_controlled_ode(model, control, params.tol, grid)
        residual = service.fluid_residual(model, control, solution)

        run.export.write_fluid(solution)
        run.export.write_json({
            'iterations': list(solution.iterations),
            'achieved_tolerance': solution.achieved_tolerance,
            'residual': residual,
            'cost': cost_lt(control, model.mark_space, model.horizon),
            'terminal': solution.terminal.tolist(),
        }, 'fluid.json')
        run.finish()
        click.echo(f"xi(T) = {solution.terminal.tolist()}, residual {residual:.3g} -> {run.out_dir}")
    return 0


@shotnoise.command()
@run_options
def rate(ctx, config_path, seed, out, threads):
    """Minimize L_T under a fluid-path constraint; writes rate.json, control.json, fluid.csv"""
    with error_boundary(ctx):
        run = _open(ctx, 'rate', config_path, seed, out, threads)
        params = run.section('rate')
        model = run.model()
        if params.terminal is not None:
            constraint = TerminalConstraint(np.asarray(params.terminal, dtype=float))
        else:
            constraint = PathConstraint(np.asarray(params.path.times, dtype=float),
                                        np.asarray(params.path.values, dtype=float))
        service = RateService(run.settings)

        result = service.minimize_rate(model, constraint, params.cells, params.constraint_tol, params.max_rounds)
        summary = result.to_dict()
        if model.state_independent and params.terminal is not None:
            summary['legendre_oracle'] = service.legendre_oracle(model, params.terminal)

        run.export.write_json(summary, 'rate.json')
        run.export.write_json(service.export_tilt(result).to_dict(), 'control.json')
        run.export.write_fluid(result.fluid)
        run.finish()
        click.echo(f"rate cost {result.cost:.9g}, residual {result.residual:.3g} -> {run.out_dir}")
    return 0


@shotnoise.command()
@run_options
def mc(ctx, config_path, seed, out, threads):
    """Estimate P(X^eps(T) in A); writes mc.csv or decay.csv"""
    with error_boundary(ctx):
        run = _open(ctx, 'mc', config_path, seed, out, threads)
        params = run.section('mc')
        model = run.model()
        event = RareEvent(tuple(params.threshold))
        service = MonteCarloService(run.settings)

        tilt = None
        if params.tilt == 'optimal':
            tilt = service.optimal_tilt(model, event, params.cells)
            run.export.write_json(tilt.to_dict(), 'tilt.json')
        elif params.tilt is not None:
            tilt = run.control(params.tilt, 'config')

        if params.epsilons is not None:
            table = service.ldp_decay_table(model, event, params.epsilons, params.method, params.replications,
                                            run.seed, tilt, run.threads, params.cells)
            run.export.write_decay(table)
            run.export.write_json(table.to_dict(), 'decay.json')
            message = f"decay intercept {table.intercept:.6g}"
        else:
            if params.method == 'exact':
                report = service.estimate_exact(model, params.epsilon, event)
            elif params.method == 'is':
                report = service.estimate_is(model, params.epsilon, event, tilt, params.replications,
                                             run.seed, run.threads)
            else:
                report = service.estimate_naive(model, params.epsilon, event, params.replications,
                                                run.seed, run.threads)
            run.export.write_reports([report])
            run.export.write_json(report.to_dict(), 'mc.json')
            message = f"p_hat {report.estimate:.6g} (se {report.standard_error:.3g})"
        run.finish()
        click.echo(f"{message} -> {run.out_dir}")
    return 0


@shotnoise.command()
@run_options
def verify(ctx, config_path, seed, out, threads):
    """Run the acceptance suite; exits 1 when any criterion fails"""
    with error_boundary(ctx):
        run = _open(ctx, 'verify', config_path, seed, out, threads)
        params = run.section('verify', VerifyParams())
        benchmark = run.model() if run.config.model is not None else None
        summary = VerificationService(run.settings).run(params, benchmark, run.seed, run.threads)

        run.export.write_json(summary.to_dict(), 'verify.json')
        run.export.write_rows(summary.rows(), 'verify.csv')
        run.finish()
        click.echo(summary.table())
    if not summary.passed:
        click.echo(f"failed criteria: {', '.join(summary.failed)}", err=True)
        ctx.exit(1)
    return 0


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line and return its exit code"""
    register_error_handlers()
    try:
        result = shotnoise.main(args=list(argv) if argv is not None else None, prog_name='shotnoise',
                                standalone_mode=False)
    except Exception as error:
        return handle_error(error)
    return result if isinstance(result, int) else 0
