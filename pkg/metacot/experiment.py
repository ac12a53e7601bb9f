"""
Corridas de punta a punta.

``run_pipeline`` encadena las etapas build → pretrain → search →
guidance → distill → evaluate → logic sobre un ``PipelineState``. Cada
etapa es una función que mide, devuelve sus mediciones y lanza
``AcceptanceError`` si algún umbral no se cumple; el encadenado usa
``Either`` y la primera falla corta el resto.

``run_scaling_sweep`` recorre la grilla (K, M, ε) y estima tiempos de
llegada base, guiados y destilados, con pendientes log-log.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.either import Either
from utils.operators import tap
from utils.rng import derive_rng, derive_seed

from . import oracle
from .acceptance import ACCEPTANCE_VERSION
from .config import ExperimentConfig, config_to_dict
from .distill import (
    ClusterLabeling,
    DistillResult,
    collect_ddist,
    distilled_cot,
    distilled_kernel,
    label_clusters,
    laziness_factors,
    laziness_residual,
    lift_path,
    population_ddist,
    rescale,
    train_distill,
)
from .dynamics import default_horizon, estimate_row, hitting_time_mc, prm_guided_kernel
from .errors import AcceptanceError, MetaChainError, ValidationError
from .kernel import SparseEdgeSet, Task, TransitionKernel, build_kernel, epsilon_max, sample_task, validate_assumptions
from .logic import (
    LogicInstance,
    concept_eval,
    draw_actions,
    group_from_preset,
    inner_product,
    make_instance,
    path_logic,
    pushforward_family,
    shortest_valid_path,
    zero_mean_residuals,
)
from .ppo import run_ppo_traced, tv_change
from .pretrain import converged_step, log_error_correlation, train_two_stage, work_units
from .search import SearchMode, SearchResult, run_search
from .softmax import SoftmaxTable

logger = logging.getLogger(__name__)

# flujos bajo la semilla maestra
_TASK_STREAM = 1
_SEARCH_STREAM = 2
_LABEL_STREAM = 3
_EVAL_STREAM = 4
_LOGIC_STREAM = 5

LABELING_ATTEMPTS = 5


def to_json_value(value: Any) -> Any:
    """numpy y tuplas a tipos JSON; NaN e infinitos a None."""
    if isinstance(value, dict):
        return {str(k): to_json_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_json_value(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_json_value(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


# ESTADO Y REPORTE

@dataclass
class PipelineState:
    config: ExperimentConfig
    kernel: Optional[TransitionKernel] = None
    edges: SparseEdgeSet = field(default_factory=SparseEdgeSet.empty)
    task: Optional[Task] = None
    model: Optional[SoftmaxTable] = None
    search: Optional[SearchResult] = None
    guided: Optional[TransitionKernel] = None
    labeling: Optional[ClusterLabeling] = None
    distilled: Optional[DistillResult] = None
    model_plus: Optional[SoftmaxTable] = None
    qcirc: Optional[np.ndarray] = None
    instance: Optional[LogicInstance] = None
    stop_reason: Optional[str] = None
    pretrain_trace: Tuple = ()
    estimates: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.config.run.seed

    @property
    def horizon(self) -> int:
        if self.config.run.horizon is not None:
            return self.config.run.horizon
        k = self.kernel
        return default_horizon(k.num_clusters, k.max_cluster_size, k.epsilon)


@dataclass(frozen=True)
class StageReport:
    name: str
    status: str
    measurements: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None

    def to_dict(self) -> dict:
        payload = {'name': self.name, 'status': self.status, 'measurements': to_json_value(self.measurements)}
        if self.error is not None:
            payload['error'] = self.error
        return payload


@dataclass(frozen=True)
class PipelineReport:
    stages: Tuple[StageReport, ...]
    config: Dict[str, Any]
    acceptance: Dict[str, Any]
    stop_reason: Optional[str] = None

    @property
    def failed_stage(self) -> Optional[str]:
        return next((s.name for s in self.stages if s.status == 'failed'), None)

    @property
    def passed(self) -> bool:
        return self.failed_stage is None

    def stage(self, name: str) -> StageReport:
        return next(s for s in self.stages if s.name == name)

    def to_dict(self) -> dict:
        return {
            'acceptance_version': ACCEPTANCE_VERSION,
            'acceptance': to_json_value(self.acceptance),
            'config': to_json_value(self.config),
            'passed': self.passed,
            'failed_stage': self.failed_stage,
            'stop_reason': self.stop_reason,
            'stages': [s.to_dict() for s in self.stages],
        }


def _require(condition: bool, stage: str, message: str) -> None:
    if not condition:
        raise AcceptanceError(message, stage)


# ETAPAS

def stage_build(state: PipelineState) -> Dict[str, Any]:
    spec = state.config.graph
    kernel, edges = build_kernel(spec)
    state.kernel, state.edges = kernel, edges
    _require(kernel.row_sum_error() <= 1e-12, 'build', "kernel rows do not sum to 1")
    _require(edges.pairs() == kernel.sparse_pairs(), 'build', "planted edges differ from supp(p_eps) minus supp(p0)")
    if len(edges):
        state.task = sample_task(kernel, edges, derive_rng(state.seed, _TASK_STREAM),
                                 state.config.run.task_difficulty)
    else:
        first = kernel.clusters[0]
        state.task = Task(int(first[0]), int(first[-1]), 0)
    measurements = {
        'num_states': kernel.num_states,
        'num_sparse_edges': len(edges),
        'sparse_edges': sorted(edges.pairs()),
        'eps_max': spec.eps_max,
        'task': {'x_in': state.task.x_in, 'x_out': state.task.x_out, 'meta_distance': state.task.meta_distance},
    }
    if kernel.num_states <= oracle.MAX_DENSE_STATES:
        measurements['assumptions'] = validate_assumptions(kernel, edges, spec).to_dict()
    return measurements


def stage_pretrain(state: PipelineState) -> Dict[str, Any]:
    schedule = replace(state.config.pretrain, seed=derive_seed(state.seed, 0))
    result = train_two_stage(state.kernel, schedule)
    state.model = result.model
    state.pretrain_trace = result.trace
    P = state.kernel.dense()
    final_error = result.trace[-1].sup_error if result.trace else float(np.max(np.abs(result.model.probabilities() - P)))
    recovered = bool(np.array_equal(result.model.support(), P > 0.0))
    tolerance = state.config.acceptance.pretrain_sup_error
    measurements = {
        'steps': len(result.trace),
        'sup_error': final_error,
        'support_recovered': recovered,
        'log_error_correlation': log_error_correlation(result.trace),
        'converged_step': converged_step(result.trace, tolerance),
        'work_units': work_units(len(result.trace), result.model),
    }
    if state.config.run.raw_samples:
        measurements['trace'] = [[p.step, p.phase, p.sup_error] for p in result.trace]
    _require(recovered, 'pretrain', "pretrained support differs from the kernel support")
    _require(final_error <= tolerance, 'pretrain', f"sup error {final_error:.3g} above {tolerance:g}")
    return measurements


def stage_search(state: PipelineState) -> Dict[str, Any]:
    kernel, config = state.kernel, state.config
    schedule = config.search.schedule(kernel.num_clusters, kernel.max_cluster_size, kernel.epsilon)
    model = state.model if schedule.mode is SearchMode.RL else None
    result = run_search(kernel, schedule, derive_seed(state.seed, _SEARCH_STREAM), model=model,
                        ppo_schedule=config.ppo, threads=config.run.threads)
    state.search = result
    if result.model is not None:
        state.model = result.model
    truth = kernel.sparse_pairs()
    recall = len(result.found & truth) / len(truth) if truth else 1.0
    measurements = dict(result.to_dict(), recall=recall, false_positives=sorted(result.false_positives()),
                        schedule={'R': schedule.R, 'N': schedule.N, 'T0': schedule.T0, 'Tmax': schedule.Tmax,
                                  'mode': schedule.mode.value, 'step_budget': schedule.step_budget})
    if not config.run.raw_samples:
        measurements.pop('rounds')
    if not truth:
        state.stop_reason = "no sparse edges"
        _require(not result.found, 'search', f"found {len(result.found)} edges in a kernel without sparse edges")
        return measurements
    _require(recall >= config.acceptance.search_min_recall, 'search',
             f"recall {recall:.2f} below {config.acceptance.search_min_recall}")
    return measurements


def _hitting_time(kernel: TransitionKernel, task: Task) -> Optional[float]:
    if kernel.num_states > oracle.MAX_DENSE_STATES:
        return None
    return float(oracle.expected_hitting_time(kernel, [task.x_out])[task.x_in])


def stage_guidance(state: PipelineState) -> Dict[str, Any]:
    kernel, config, found = state.kernel, state.config, state.search.found
    ratio = epsilon_max(kernel.max_cluster_size, config.graph.eps_max_const) / kernel.epsilon
    acceptance = config.acceptance
    measurements: Dict[str, Any] = {'ratio': ratio, 'mode': config.search.mode.value}
    if config.search.mode is SearchMode.PRM:
        state.guided = prm_guided_kernel(kernel, found, max(1.0, ratio))
    else:
        base_model = SoftmaxTable.from_probabilities(kernel.dense())
        state.guided = kernel.with_probabilities(state.model.probabilities())
        tv = tv_change(base_model, state.model)
        rerun = run_ppo_traced(state.model, kernel, found, config.ppo)
        delta = float(np.max(np.abs(rerun.model.logits - state.model.logits)))
        P, Q = kernel.dense(), state.guided.dense()
        planted = sorted(found & kernel.sparse_pairs())
        scaled = [Q[x, y] / (P[x, y] * ratio) for x, y in planted]
        eps_max = ratio * kernel.epsilon
        measurements.update(tv_change=tv, tv_bound=acceptance.ppo_tv_factor * config.graph.d_out * eps_max,
                            rerun_logit_delta=delta, scaled_edge_probabilities=scaled)
        if ratio > 1.0:
            _require(all(acceptance.ppo_band_low <= s <= acceptance.ppo_band_high + 1e-12 for s in scaled),
                     'guidance', "PPO edge probabilities outside the target band")
            _require(tv <= measurements['tv_bound'], 'guidance', f"TV change {tv:.3g} above bound")
        _require(delta == 0.0, 'guidance', f"re-running PPO moved the logits by {delta:.3g}")
    base = _hitting_time(kernel, state.task)
    guided = _hitting_time(state.guided, state.task)
    if base is not None and guided is not None:
        speedup = base / guided if guided > 0 else math.inf
        measurements.update(base_hitting_time=base, guided_hitting_time=guided, speedup=speedup)
        if ratio > 1.0 and state.search.equals_sparse_edges:
            required = acceptance.guidance_min_speedup_fraction * ratio
            _require(speedup >= required, 'guidance', f"speedup {speedup:.3g} below {required:.3g}")
    return measurements


def _labeling(state: PipelineState) -> Tuple[ClusterLabeling, int]:
    kernel, config = state.kernel, state.config
    T0 = config.search.schedule(kernel.num_clusters, kernel.max_cluster_size, kernel.epsilon).T0
    targets = state.edges.inbound_targets() if config.graph.inbound_targets else None
    labeling = None
    for attempt in range(LABELING_ATTEMPTS):
        labeling = label_clusters(kernel, T0, derive_seed(state.seed, _LABEL_STREAM, attempt), targets)
        if labeling.is_transversal(kernel):
            return labeling, attempt + 1
        logger.debug("labelling attempt %d produced %d representatives", attempt, labeling.size)
    return labeling, LABELING_ATTEMPTS


def stage_distill(state: PipelineState) -> Dict[str, Any]:
    kernel, config = state.kernel, state.config
    labeling, attempts = _labeling(state)
    state.labeling = labeling
    _require(labeling.is_transversal(kernel), 'distill',
             f"cluster labelling found {labeling.size} representatives for {kernel.num_clusters} clusters")
    exact = population_ddist(kernel, labeling)
    if config.distill.mode == 'exact':
        ddist = exact
    else:
        counts = collect_ddist(kernel, labeling, config.distill.mc_steps, derive_seed(state.seed, _LABEL_STREAM, 99))
        ddist = counts.frequencies()
    result = train_distill(ddist, config.distill.schedule(), kernel.epsilon, kernel.max_cluster_size)
    state.distilled = result
    state.qcirc = exact / exact.sum(axis=1, keepdims=True)
    state.model_plus = rescale(result.model, result.schedule.beta)
    K = kernel.num_clusters
    sup_error = float(np.max(np.abs(result.model.probabilities() - state.qcirc)))
    expected_mask = ~(state.edges.meta_adjacency(K) | np.eye(K, dtype=bool))
    assumption_five = config.graph.inbound_targets or K <= 2
    measurements = {
        'mode': config.distill.mode,
        'labeling_attempts': attempts,
        'labeling_matches_partition': labeling.matches_partition(kernel),
        'representatives': list(labeling.ordered(kernel).representatives),
        'T_thres': result.schedule.T_thres,
        'T_dist': result.schedule.T_dist,
        'beta': result.schedule.beta,
        'sup_error': sup_error,
        'support_matches_meta_graph': bool(np.array_equal(result.model.mask, expected_mask)),
        'laziness': laziness_factors(state.qcirc, state.model_plus),
        'laziness_residual': laziness_residual(state.qcirc, state.model_plus),
        'distilled_kernel': state.model_plus.probabilities(),
        'work_units': work_units(result.schedule.T_dist, result.model),
    }
    if kernel.num_states <= oracle.MAX_DENSE_STATES:
        measurements['qstar_reversibility'] = oracle.qstar_reversibility_ratios(kernel)
    if config.distill.mode == 'exact' and assumption_five:
        tolerance = config.acceptance.distill_sup_error
        _require(sup_error < tolerance, 'distill', f"distillation sup error {sup_error:.3g} above {tolerance:g}")
        _require(measurements['support_matches_meta_graph'], 'distill',
                 "distilled support differs from the sparse meta-graph plus diagonal")
        _require(measurements['laziness_residual'] < config.acceptance.laziness_tolerance, 'distill',
                 f"laziness identity violated by {measurements['laziness_residual']:.3g}")
    return measurements


def stage_evaluate(state: PipelineState) -> Dict[str, Any]:
    kernel, config, task = state.kernel, state.config, state.task
    acceptance = config.acceptance
    seed = derive_seed(state.seed, _EVAL_STREAM)
    rollouts, threads = config.run.rollouts, config.run.threads
    base = hitting_time_mc(kernel, task.x_in, [task.x_out], state.horizon, rollouts, seed, threads)
    measurements: Dict[str, Any] = {'base_mc': asdict(base)}
    state.estimates = [estimate_row('base', kernel, task.x_in, [task.x_out], base)]
    exact = _hitting_time(kernel, task)
    if exact is not None:
        measurements['base_oracle'] = exact
        if base.truncation_count == 0:
            bound = acceptance.mc_stderr_multiplier * base.stderr + 1e-9
            _require(abs(base.mean - exact) <= bound, 'evaluate',
                     f"MC hitting time {base.mean:.4g} vs oracle {exact:.4g} beyond {bound:.3g}")
    if state.guided is not None:
        guided = hitting_time_mc(state.guided, task.x_in, [task.x_out], state.horizon, rollouts, seed, threads)
        measurements['guided_mc'] = asdict(guided)
        state.estimates.append(estimate_row('guided', state.guided, task.x_in, [task.x_out], guided))
    if state.model_plus is not None:
        k_in, k_out = int(kernel.partition[task.x_in]), int(kernel.partition[task.x_out])
        chain = distilled_kernel(state.model_plus)
        distilled = hitting_time_mc(chain, k_in, [k_out], state.horizon, rollouts, seed, threads)
        measurements['distilled_mc'] = asdict(distilled)
        state.estimates.append(estimate_row('distilled', kernel, k_in, [k_out], distilled))
        _require(distilled.mean <= acceptance.distilled_hitting_factor * kernel.num_clusters, 'evaluate',
                 f"distilled hitting time {distilled.mean:.3g} above {acceptance.distilled_hitting_factor}·K")
        reps = state.labeling.ordered(kernel).representatives
        cluster_path = distilled_cot(state.model_plus, k_in, k_out, state.horizon, seed, reps)
        lifted = lift_path(kernel, cluster_path, state.edges, seed, task.x_in, task.x_out)
        measurements['lifted_path'] = {
            'clusters': list(cluster_path.clusters),
            'length': lifted.length,
            'sparse_crossings': len(lifted.sparse_crossings),
            'truncated': lifted.truncated,
            'valid': lifted.is_valid(kernel),
        }
        _require(lifted.is_valid(kernel), 'evaluate', "lifted path uses an edge outside E")
    return measurements


def stage_logic(state: PipelineState) -> Dict[str, Any]:
    kernel, config, task = state.kernel, state.config, state.task
    options = config.logic
    group = group_from_preset(options.group).check_axioms()
    mask = state.search.found if (options.mask_source == 'searched' and state.search) else None
    seed = derive_seed(state.seed, _LOGIC_STREAM)
    instance = make_instance(group, kernel, seed, options.classifier, mask)
    state.instance = instance
    path = shortest_valid_path(kernel, task.x_in, task.x_out)
    value, label = path_logic(instance, path, kernel)
    stable = True
    off_mask = [e for e in path.edges() if e not in instance.mask]
    for i in range(100):
        noise = draw_actions(group, off_mask, derive_seed(seed, i))
        stable &= path_logic(instance.with_actions({**instance.actions, **noise}), path)[0] == value
    measurements = {
        'group': group.name,
        'path_length': path.length,
        'sparse_crossings': len(path.sparse_crossings),
        'logic_value': value,
        'label': label,
        'concept': concept_eval(instance, kernel, task.x_in, task.x_out),
        'mask_property': stable,
        'zero_mean_residuals': zero_mean_residuals(group, instance.phi),
    }
    q = 2
    if kernel.num_clusters > 1 and q * config.graph.n_out <= min(kernel.cluster_sizes):
        shifted = pushforward_family(kernel, [1] * kernel.num_clusters, q, config.graph.n_out)
        estimate = inner_product(group, kernel, shifted, [(task.x_in, task.x_out)], options.samples, seed,
                                 options.classifier)
        measurements['pushforward_inner_product'] = {'value': estimate.value, 'stderr': estimate.stderr}
    _require(stable, 'logic', "actions off the mask changed the path logic")
    _require(not np.any(measurements['zero_mean_residuals']), 'logic', "classifier is not zero-mean")
    return measurements


STAGE_FUNCTIONS: Dict[str, Callable[[PipelineState], Dict[str, Any]]] = {
    'build': stage_build,
    'pretrain': stage_pretrain,
    'search': stage_search,
    'guidance': stage_guidance,
    'distill': stage_distill,
    'evaluate': stage_evaluate,
    'logic': stage_logic,
}

# etapas que necesitan ε > 0 y aristas dispersas
_NEEDS_SPARSE = ('guidance', 'distill')


def _run_stage(name: str, state: PipelineState) -> Either[MetaChainError, Dict[str, Any]]:
    started = time.perf_counter()
    return Either.attempt(STAGE_FUNCTIONS[name], state).map(
        tap(lambda _: logger.info("stage %s done in %.2fs", name, time.perf_counter() - started))
    )


def run_pipeline(config: ExperimentConfig) -> PipelineReport:
    """
    Ejecuta las etapas de ``config.run.stages`` en orden. Una etapa que
    falla deja el reporte marcado con su nombre y las siguientes quedan
    'skipped'.
    """
    return run_stages(config, config.run.stages)[0]


def run_stages(config: ExperimentConfig, stages: Sequence[str]) -> Tuple[PipelineReport, PipelineState]:
    """Como ``run_pipeline`` pero con etapas explícitas; devuelve también el estado final."""
    unknown = [name for name in stages if name not in STAGE_FUNCTIONS]
    if unknown:
        raise ValidationError(f"unknown stages {unknown}")
    state = PipelineState(config)
    reports: List[StageReport] = []
    halted = False
    for name in stages:
        if name != 'build' and state.kernel is None:
            halted = True
        if halted or (state.stop_reason and name in _NEEDS_SPARSE + ('evaluate', 'logic')):
            reports.append(StageReport(name, 'skipped'))
            continue
        if name == 'guidance' and state.search is None:
            reports.append(StageReport(name, 'skipped', error="requires the search stage"))
            continue
        outcome = _run_stage(name, state)
        if outcome.is_left:
            error = outcome.error
            logger.error("stage %s failed: %s", name, error)
            reports.append(StageReport(name, 'failed', error=f"{type(error).__name__}: {error}"))
            halted = True
        else:
            reports.append(StageReport(name, 'passed', outcome.value))
    report = PipelineReport(tuple(reports), config_to_dict(config), config.acceptance.to_dict(), state.stop_reason)
    logger.info("pipeline %s%s", "passed" if report.passed else f"failed at {report.failed_stage}",
                f" ({state.stop_reason})" if state.stop_reason else "")
    return report, state


# BARRIDO DE ESCALA

SWEEP_COLUMNS = (
    'index', 'K', 'M', 'epsilon', 'x_in', 'x_out', 'meta_distance',
    'base_mean', 'base_stderr', 'base_truncated', 'oracle',
    'guided_mean', 'guided_stderr', 'distilled_mean', 'distilled_stderr',
)


@dataclass(frozen=True)
class SweepResult:
    rows: Tuple[Dict[str, Any], ...]
    slopes: Dict[str, List[Dict[str, Any]]]
    invariance: List[Dict[str, Any]]

    def to_dict(self) -> dict:
        return to_json_value({'rows': list(self.rows), 'slopes': self.slopes, 'distilled_invariance': self.invariance})


def representatives_for(kernel: TransitionKernel, edges: SparseEdgeSet, use_inbound: bool) -> List[int]:
    """Puntos de llegada designados si existen; si no, el primer estado de cada cluster."""
    targets = edges.inbound_targets() if use_inbound else {}
    return [targets.get(k, int(states[0])) for k, states in enumerate(kernel.clusters)]


def _sweep_point(config: ExperimentConfig, index: int, K: int, M: int, epsilon: float) -> Dict[str, Any]:
    spec = replace(config.graph, num_clusters=K, cluster_size=M, epsilon=epsilon, cluster_sizes=None)
    kernel, edges = build_kernel(spec)
    task = sample_task(kernel, edges, derive_rng(config.graph.seed, _TASK_STREAM, K, M), config.run.task_difficulty)
    seed = derive_seed(config.run.seed, index)
    horizon = config.sweep.horizon or default_horizon(K, M, epsilon)
    rollouts = config.sweep.rollouts
    base = hitting_time_mc(kernel, task.x_in, [task.x_out], horizon, rollouts, seed)
    boost = max(1.0, spec.eps_max / epsilon)
    guided = hitting_time_mc(prm_guided_kernel(kernel, edges, boost), task.x_in, [task.x_out],
                             horizon, rollouts, seed)
    row: Dict[str, Any] = {
        'index': index, 'K': K, 'M': M, 'epsilon': epsilon,
        'x_in': task.x_in, 'x_out': task.x_out, 'meta_distance': task.meta_distance,
        'base_mean': base.mean, 'base_stderr': base.stderr, 'base_truncated': base.truncation_count,
        'oracle': _hitting_time(kernel, task),
        'guided_mean': guided.mean, 'guided_stderr': guided.stderr,
        'distilled_mean': None, 'distilled_stderr': None,
    }
    try:
        labeling = ClusterLabeling.from_representatives(kernel, representatives_for(kernel, edges, spec.inbound_targets))
        result = train_distill(population_ddist(kernel, labeling), config.distill.schedule(), epsilon, M)
        chain = distilled_kernel(rescale(result.model, result.schedule.beta))
        k_in, k_out = int(kernel.partition[task.x_in]), int(kernel.partition[task.x_out])
        distilled = hitting_time_mc(chain, k_in, [k_out], horizon, config.sweep.distilled_rollouts, seed)
        row.update(distilled_mean=distilled.mean, distilled_stderr=distilled.stderr)
    except MetaChainError as e:
        logger.warning("grid point %d: distillation failed: %s", index, e)
    logger.info("grid point %d (K=%d, M=%d, eps=%g): base %.1f, guided %.1f",
                index, K, M, epsilon, base.mean, guided.mean)
    return row


def loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    """Pendiente de mínimos cuadrados de log y contra log x."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def fit_slopes(rows: List[Dict[str, Any]]) -> Dict[str, List[Dict[str, Any]]]:
    """Pendientes del tiempo base contra 1/ε, K y M, agrupando por los otros dos ejes."""
    axes = {'epsilon': ('K', 'M'), 'K': ('M', 'epsilon'), 'M': ('K', 'epsilon')}
    slopes: Dict[str, List[Dict[str, Any]]] = {}
    for axis, fixed in axes.items():
        groups: Dict[Tuple, List[Dict[str, Any]]] = {}
        for row in rows:
            groups.setdefault(tuple(row[f] for f in fixed), []).append(row)
        fits = []
        for key, members in sorted(groups.items()):
            values = sorted({m[axis] for m in members})
            if len(values) < 2:
                continue
            x = np.array([1.0 / m[axis] if axis == 'epsilon' else m[axis] for m in members], dtype=float)
            y = np.array([m['base_mean'] for m in members], dtype=float)
            fits.append(dict(zip(fixed, key), slope=loglog_slope(x, y), points=len(members)))
        slopes[axis] = fits
    return slopes


def distilled_invariance(rows: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """max/min del tiempo destilado a lo largo de ε para cada (K, M)."""
    groups: Dict[Tuple[int, int], List[float]] = {}
    for row in rows:
        if row['distilled_mean'] is not None:
            groups.setdefault((row['K'], row['M']), []).append(row['distilled_mean'])
    return [{'K': K, 'M': M, 'ratio': max(v) / min(v)} for (K, M), v in sorted(groups.items()) if len(v) > 1]


def run_scaling_sweep(config: ExperimentConfig) -> SweepResult:
    """Un punto por (K, M, ε); los puntos corren en paralelo y cada uno usa la semilla (maestra, índice)."""
    grid = config.sweep_grid()
    if not grid:
        raise ValidationError("sweep grid is empty")
    with ThreadPoolExecutor(max_workers=max(1, config.run.threads)) as executor:
        rows = list(executor.map(lambda item: _sweep_point(config, item[0], *item[1]), enumerate(grid)))
    return SweepResult(tuple(rows), fit_slopes(rows), distilled_invariance(rows))
