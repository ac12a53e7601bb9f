"""
Línea de comandos.

    python -m metacot <comando> --config PATH [--seed N] [--out DIR]
                      [--threads N] [--format csv|json] [--log-level NIVEL]

Códigos de salida: 0 éxito, 2 falla de aceptación, 3 configuración
inválida. Los reportes van a ``--out``; stdout lleva una línea de resumen
y los logs van a stderr.
"""

import argparse
import logging
import os
import sys
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence

from core.either import Either
from core.io_monad import IO, io_print, io_write_json, io_write_text

from . import oracle, ppo, pretrain
from .config import ExperimentConfig, io_load_config
from .distill import distilled_to_dict
from .dynamics import ESTIMATE_COLUMNS
from .errors import ConfigError, MetaChainError, ValidationError
from .experiment import PipelineState, run_scaling_sweep, run_stages
from .kernel import build_kernel, kernel_to_text, validate_assumptions
from .report import io_write_csv, io_write_payload, io_write_pipeline, io_write_sweep
from .search import SearchMode

logger = logging.getLogger('metacot')

EXIT_OK = 0
EXIT_ACCEPTANCE = 2
EXIT_CONFIG = 3

# subcomando → etapas del pipeline que ejecuta
COMMAND_STAGES: Dict[str, Sequence[str]] = {
    'simulate': ('build', 'evaluate'),
    'pretrain': ('build', 'pretrain'),
    'search': ('build', 'search'),
    'ppo': ('build', 'search', 'guidance'),
    'distill': ('build', 'distill'),
    'logic-eval': ('build', 'logic'),
}

COMMANDS = ('generate', 'validate') + tuple(COMMAND_STAGES) + ('pipeline', 'sweep')


@dataclass(frozen=True)
class CommandResult:
    actions: List[IO]
    passed: bool
    summary: str


def _artifacts(state: PipelineState, out: str) -> List[IO]:
    actions = []
    if state.model is not None:
        actions.append(io_write_text(os.path.join(out, 'model.json'), state.model.to_json()))
    if state.model_plus is not None:
        reps = state.labeling.ordered(state.kernel).representatives
        actions.append(io_write_json(os.path.join(out, 'distilled.json'),
                                     distilled_to_dict(state.model_plus, reps, state.distilled.schedule.beta)))
    if state.instance is not None:
        actions.append(io_write_text(os.path.join(out, 'logic_instance.json'), state.instance.to_json()))
    if state.pretrain_trace:
        actions.append(io_write_csv(os.path.join(out, 'error_trace.csv'),
                                    pretrain.trace_rows(state.pretrain_trace), pretrain.TRACE_COLUMNS))
    if state.search is not None and state.config.search.mode is SearchMode.RL:
        actions.append(io_write_csv(os.path.join(out, 'ppo_trace.csv'),
                                    ppo.trace_rows(state.search.ppo_trace), ppo.TRACE_COLUMNS))
    if state.estimates:
        actions.append(io_write_csv(os.path.join(out, 'estimates.csv'), state.estimates, ESTIMATE_COLUMNS))
    return actions


def cmd_generate(config: ExperimentConfig) -> CommandResult:
    kernel, edges = build_kernel(config.graph)
    out = config.run.out
    payload = {
        'num_states': kernel.num_states,
        'clusters': [c.tolist() for c in kernel.clusters],
        'sparse_edges': [[e.source, e.target, e.probability] for e in edges],
        'eps_max': config.graph.eps_max,
    }
    actions = [io_write_text(os.path.join(out, 'kernel.txt'), kernel_to_text(kernel)),
               io_write_payload(os.path.join(out, 'graph.json'), payload)]
    return CommandResult(actions, True, f"generated |S|={kernel.num_states} with {len(edges)} sparse edges")


def cmd_validate(config: ExperimentConfig) -> CommandResult:
    """Supuestos del generador y, si el kernel cabe en el oráculo, identidades exactas."""
    kernel, edges = build_kernel(config.graph)
    report = validate_assumptions(kernel, edges, config.graph)
    payload = {'assumptions': report.to_dict()}
    passed = report.passed
    if kernel.epsilon > 0.0 and kernel.num_states <= oracle.MAX_DENSE_STATES:
        thresholds = config.acceptance
        balance = oracle.detailed_balance_residual(kernel)
        coupling = oracle.stationary(kernel).coupling_error(kernel.clusters)
        payload.update(detailed_balance_residual=balance, coupling_error=coupling)
        passed &= balance < thresholds.detailed_balance_tolerance and coupling < thresholds.coupling_tolerance
    action = io_write_payload(os.path.join(config.run.out, 'validate.json'), payload)
    failures = ', '.join(c.name for c in report.failures()) or 'none'
    return CommandResult([action], passed, f"validate: {'passed' if passed else 'failed'} (failed checks: {failures})")


def stage_command(name: str) -> Callable[[ExperimentConfig], CommandResult]:
    stages = COMMAND_STAGES.get(name)

    def command(config: ExperimentConfig) -> CommandResult:
        if name == 'ppo':
            config = replace(config, search=replace(config.search, mode=SearchMode.RL))
        report, state = run_stages(config, stages if stages is not None else config.run.stages)
        out = config.run.out
        actions = [io_write_pipeline(out, report, config.run.format)] + _artifacts(state, out)
        status = 'passed' if report.passed else f"failed at {report.failed_stage}"
        note = f" ({report.stop_reason})" if report.stop_reason else ""
        return CommandResult(actions, report.passed, f"{name}: {status}{note}")

    return command


def cmd_sweep(config: ExperimentConfig) -> CommandResult:
    result = run_scaling_sweep(config)
    action = io_write_sweep(config.run.out, result, config.run.charts)
    slopes = ', '.join(f"{fit['slope']:.3f}" for fit in result.slopes.get('epsilon', []))
    return CommandResult([action], True, f"sweep: {len(result.rows)} grid points; slope vs 1/eps: {slopes or 'n/a'}")


HANDLERS: Dict[str, Callable[[ExperimentConfig], CommandResult]] = {
    'generate': cmd_generate,
    'validate': cmd_validate,
    'sweep': cmd_sweep,
    'pipeline': stage_command('pipeline'),
    **{name: stage_command(name) for name in COMMAND_STAGES},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='metacot', description='Metastable Markov-chain CoT simulator')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', required=True, help='key = value file (or .json)')
    common.add_argument('--seed', type=int, default=None, help='master seed (overrides run.seed)')
    common.add_argument('--out', default=None, help='output directory (overrides run.out)')
    common.add_argument('--threads', type=int, default=None)
    common.add_argument('--format', choices=('csv', 'json'), default=None)
    common.add_argument('--log-level', default='WARNING', choices=('DEBUG', 'INFO', 'WARNING', 'ERROR'))
    sub = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level), stream=sys.stderr,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def load_config(args: argparse.Namespace) -> Either[ConfigError, ExperimentConfig]:
    return io_load_config(args.config).run().bind(
        lambda config: Either.attempt(
            lambda: config.with_overrides(args.seed, args.out, args.threads, args.format).validate()
        )
    )


def execute(command: str, config: ExperimentConfig) -> int:
    """Corre el handler, ejecuta sus efectos y traduce el resultado a código de salida."""
    outcome = Either.attempt(HANDLERS[command], config)
    if outcome.is_left:
        error = outcome.error
        if isinstance(error, (ConfigError, ValidationError)):
            print(f"invalid input: {error}", file=sys.stderr)
            return EXIT_CONFIG
        if isinstance(error, MetaChainError):
            print(f"{command} failed: {type(error).__name__}: {error}", file=sys.stderr)
            return EXIT_ACCEPTANCE
        raise error
    result = outcome.value
    written = IO.sequence(result.actions).attempt().run()
    if written.is_left:
        print(f"cannot write reports: {written.error}", file=sys.stderr)
        return EXIT_CONFIG
    io_print(result.summary).run()
    return EXIT_OK if result.passed else EXIT_ACCEPTANCE


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    loaded = load_config(args)
    if loaded.is_left:
        print(f"invalid config: {loaded.error}", file=sys.stderr)
        return EXIT_CONFIG
    return execute(args.command, loaded.value)
