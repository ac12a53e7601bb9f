"""
Pretraining en dos etapas del modelo de bigramas p̂_W = softmax(W).

Descenso por gradiente sobre la pérdida poblacional de entropía cruzada
E[−log p̂_W(X₁|X₀)], X₀ ~ μ, X₁ ~ p^ε(·|X₀). Tras T₁ pasos se enmascaran
las entradas con p̂ < c_thres·ε y se siguen T₂ pasos sobre el soporte
recuperado.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from utils.rng import derive_rng

from .dynamics import BatchWalker
from .errors import SupportRecoveryError, ValidationError
from .kernel import TransitionKernel
from .softmax import SoftmaxTable, masked_softmax

logger = logging.getLogger(__name__)

ERROR_FLOOR = 1e-12


class SourceDistribution(str, Enum):
    """Ley de X₀."""
    UNIFORM = "uniform"
    STATIONARY = "stationary"


def source_weights(kernel: TransitionKernel, source: SourceDistribution = SourceDistribution.UNIFORM) -> np.ndarray:
    """μ sobre S: uniforme o π^ε exacta del oráculo."""
    source = SourceDistribution(source)
    if source is SourceDistribution.UNIFORM:
        return np.full(kernel.num_states, 1.0 / kernel.num_states)
    from .oracle import stationary
    return stationary(kernel).global_


@dataclass(frozen=True)
class TrainSchedule:
    """
    Parámetros del pretraining. ``eta``, ``T1`` y ``T2`` en None se
    resuelven contra el kernel con ``resolve``.
    """
    eta: Optional[float] = None
    T1: Optional[int] = None
    T2: Optional[int] = None
    c_thres: float = 0.25
    source_dist: SourceDistribution = SourceDistribution.UNIFORM
    c1: float = 0.05
    c2: float = 0.05
    sampled_batch: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'source_dist', SourceDistribution(self.source_dist))

    def validate(self) -> 'TrainSchedule':
        if not 0.0 < self.c_thres < 1.0:
            raise ValidationError(f"c_thres={self.c_thres} must lie in (0, 1)")
        for name in ('eta', 'T1', 'T2'):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.c1 <= 0 or self.c2 <= 0 or self.sampled_batch < 0:
            raise ValidationError("schedule constants must be positive")
        return self

    def resolve(self, kernel: TransitionKernel, weights: np.ndarray) -> 'TrainSchedule':
        """T₁ = ⌈c1·K·M²/ε²⌉, T₂ = ⌈c2·K·M/ε²⌉, η = 1/max μ."""
        self.validate()
        scale = _probability_scale(kernel)
        K, M = kernel.num_clusters, kernel.max_cluster_size
        return replace(
            self,
            eta=self.eta if self.eta is not None else float(1.0 / weights.max()),
            T1=self.T1 if self.T1 is not None else math.ceil(self.c1 * K * M * M / scale ** 2),
            T2=self.T2 if self.T2 is not None else math.ceil(self.c2 * K * M / scale ** 2),
        )


def _probability_scale(kernel: TransitionKernel) -> float:
    """ε, o la menor probabilidad positiva si el kernel no tiene aristas dispersas."""
    if kernel.epsilon > 0.0:
        return kernel.epsilon
    return float(kernel.matrix.data[kernel.matrix.data > 0].min())


# PÉRDIDA Y GRADIENTES

def population_ce_loss(model: SoftmaxTable, kernel: TransitionKernel, weights: np.ndarray) -> float:
    P = kernel.dense()
    return _loss_from(model.probabilities(), P, P > 0.0, weights)


def population_ce_gradient(model: SoftmaxTable, kernel: TransitionKernel, weights: np.ndarray) -> np.ndarray:
    """Fila i: μ_i·(p̂_i − p_i); cero en las entradas enmascaradas."""
    if model.shape != (kernel.num_states, kernel.num_states):
        raise ValidationError(f"model shape {model.shape} does not match {kernel.num_states} states")
    gradient = weights[:, None] * (model.probabilities() - kernel.dense())
    gradient[model.mask] = 0.0
    return gradient


def sampled_ce_gradient(
    model: SoftmaxTable,
    engine: BatchWalker,
    weights: np.ndarray,
    batch: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Estimador insesgado del gradiente con ``batch`` bigramas muestreados."""
    sources = rng.choice(len(weights), size=batch, p=weights)
    targets = engine.next_states(sources, rng.random(batch))
    Q = model.probabilities()
    gradient = np.zeros(model.shape)
    np.add.at(gradient, sources, Q[sources])
    np.add.at(gradient, (sources, targets), -1.0)
    gradient /= batch
    gradient[model.mask] = 0.0
    return gradient


def sup_error(model: SoftmaxTable, kernel: TransitionKernel) -> float:
    return float(np.max(np.abs(model.probabilities() - kernel.dense())))


# ENTRENAMIENTO

class TracePoint(NamedTuple):
    step: int
    phase: int
    sup_error: float
    loss: float


class TrainingResult(NamedTuple):
    model: SoftmaxTable
    trace: Tuple[TracePoint, ...]


def threshold_mask(model: SoftmaxTable, kernel: TransitionKernel, threshold: float) -> np.ndarray:
    """Entradas nuevas a enmascarar; falla si alguna es una arista verdadera."""
    Q = model.probabilities()
    P = kernel.dense()
    below = (Q < threshold) & ~model.mask
    lost = below & (P > 0.0)
    if lost.any():
        i, j = np.argwhere(lost)[int(np.argmax(P[lost]))]
        raise SupportRecoveryError(
            f"threshold {threshold:.3g} would mask true edge ({i}, {j}) with p={P[i, j]:.3g}, "
            f"estimate {Q[i, j]:.3g}; increase T1",
            (int(i), int(j)), float(P[i, j]), float(Q[i, j]),
        )
    return below


def _loss_from(Q: np.ndarray, P: np.ndarray, support: np.ndarray, weights: np.ndarray) -> float:
    if np.any(Q[support] <= 0.0):
        return math.inf
    terms = np.zeros_like(P)
    terms[support] = P[support] * np.log(Q[support])
    return float(-(weights * terms.sum(axis=1)).sum())


def _descend(model, kernel, weights, schedule, steps, phase, start, engine, rng, trace: List[TracePoint]):
    P = kernel.dense()
    support = P > 0.0
    mask = model.mask
    logits = np.array(model.logits)
    Q = model.probabilities()
    for t in range(steps):
        if schedule.sampled_batch:
            gradient = sampled_ce_gradient(model.with_logits(logits), engine, weights, schedule.sampled_batch, rng)
        else:
            gradient = weights[:, None] * (Q - P)
            gradient[mask] = 0.0
        logits -= schedule.eta * gradient
        Q = masked_softmax(logits, mask)
        trace.append(TracePoint(start + t + 1, phase, float(np.max(np.abs(Q - P))),
                                _loss_from(Q, P, support, weights)))
    return model.with_logits(logits)


def train_two_stage(kernel: TransitionKernel, schedule: TrainSchedule = TrainSchedule()) -> TrainingResult:
    """
    T₁ pasos desde W = 0, umbral en c_thres·ε, T₂ pasos más. La traza
    registra sup|p̂ − p^ε| y la pérdida después de cada paso.
    """
    weights = source_weights(kernel, schedule.source_dist)
    schedule = schedule.resolve(kernel, weights)
    threshold = schedule.c_thres * _probability_scale(kernel)
    smallest = float(kernel.matrix.data[kernel.matrix.data > 0].min())
    if threshold >= smallest:
        raise ValidationError(
            f"threshold {threshold:.3g} is not below the smallest true probability {smallest:.3g}; lower c_thres"
        )
    logger.info("pretraining |S|=%d: eta=%.3g T1=%d T2=%d threshold=%.3g",
                kernel.num_states, schedule.eta, schedule.T1, schedule.T2, threshold)

    engine = BatchWalker(kernel) if schedule.sampled_batch else None
    rng = derive_rng(schedule.seed, 0)
    trace: List[TracePoint] = []
    model = SoftmaxTable.zeros(kernel.num_states)
    model = _descend(model, kernel, weights, schedule, schedule.T1, 1, 0, engine, rng, trace)

    masked = threshold_mask(model, kernel, threshold)
    logger.debug("thresholding masked %d entries", int(masked.sum()))
    model = model.masked(masked)
    model = _descend(model, kernel, weights, schedule, schedule.T2, 2, schedule.T1, engine, rng, trace)
    logger.info("pretraining done: sup error %.3g", trace[-1].sup_error if trace else sup_error(model, kernel))
    return TrainingResult(model, tuple(trace))


def log_error_correlation(trace, phase: int = 2, floor: float = ERROR_FLOOR) -> float:
    """Correlación de Pearson entre log(error) y paso; cerca de −1 si el decaimiento es geométrico."""
    points = [(p.step, p.sup_error) for p in trace if p.phase == phase and p.sup_error > floor]
    if len(points) < 3:
        return float('nan')
    steps, errors = np.array(points).T
    return float(np.corrcoef(steps, np.log(errors))[0, 1])


def converged_step(trace, tolerance: float) -> Optional[int]:
    """Primer paso con error sup bajo ``tolerance``."""
    return next((p.step for p in trace if p.sup_error < tolerance), None)


def work_units(steps: int, model: SoftmaxTable) -> int:
    """Pasos × parámetros del modelo."""
    return int(steps) * model.logits.size


TRACE_COLUMNS = ('step', 'phase', 'sup_error')


def trace_rows(trace) -> List[dict]:
    return [{'step': p.step, 'phase': p.phase, 'sup_error': repr(p.sup_error)} for p in trace]
